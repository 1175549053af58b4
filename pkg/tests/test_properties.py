"""Property-based checks of algebraic invariants."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from symreg.autodiff import Tensor, conv3d
from symreg.data import PairedDataset, dataset_bytes, lateral_flip, parse_dataset, split_counts
from symreg.metrics import curve_auc, sharpness_cp_curve
from symreg.model import SymmetricLossConfig, clip, loss_final, loss_reg, loss_sym
from symreg.uncertainty import SetIntervals

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
targets = st.floats(0.44, 6.84, allow_nan=False)


def vec(n_min=1, n_max=20, elements=finite):
    return st.integers(n_min, n_max).flatmap(lambda n: arrays(np.float64, n, elements=elements))


@given(st.floats(0, 100, allow_nan=False), st.floats(0, 10, allow_nan=False))
def test_clip_is_zero_or_identity(a, margin):
    out = clip(a, margin)
    assert out == (a if a > margin else 0.0)


@given(st.data())
def test_beta_zero_final_equals_reg(data):
    n = data.draw(st.integers(1, 12))
    p_r, p_l, y_r, y_l = (data.draw(arrays(np.float64, n, elements=targets)) for _ in range(4))
    cfg = SymmetricLossConfig(alpha=data.draw(st.floats(0, 0.5)), beta=0.0)
    assert loss_final((p_r, p_l), (y_r, y_l), cfg).item() == loss_reg((p_r, p_l), (y_r, y_l)).item()


@given(st.data())
def test_sym_loss_vanishes_inside_margin(data):
    n = data.draw(st.integers(1, 12))
    cfg = SymmetricLossConfig(alpha=data.draw(st.floats(0.001, 0.2)))
    p_r = data.draw(arrays(np.float64, n, elements=targets))
    frac = data.draw(arrays(np.float64, n, elements=st.floats(-1, 1)))
    p_l = p_r + frac * cfg.margin
    # rounding in the subtraction can push a gap a hair above the margin
    gaps = (p_r - p_l) ** 2
    if np.all(gaps <= cfg.margin ** 2):
        assert loss_sym((p_r, p_l), cfg).item() == 0.0


@given(st.data())
def test_symmetric_intervals_dominate_plain(data):
    cases = data.draw(st.integers(1, 6))
    n = data.draw(st.integers(2, 8))
    samples = data.draw(arrays(np.float64, (cases, n, 2), elements=finite))
    g_r, g_l = data.draw(st.floats(0, 1)), data.draw(st.floats(0, 1))
    iv = SetIntervals.from_samples(samples)
    w_r, w_l = iv.widths(g_r, g_l)
    assert np.all(w_r >= iv.sigma_r) and np.all(w_l >= iv.sigma_l)
    z_r, z_l = iv.widths(0.0, 0.0)
    assert np.array_equal(z_r, iv.sigma_r) and np.array_equal(z_l, iv.sigma_l)


@settings(max_examples=50)
@given(st.data())
def test_curve_properties(data):
    n = data.draw(st.integers(1, 15))
    y = data.draw(arrays(np.float64, n, elements=targets))
    c = data.draw(arrays(np.float64, n, elements=targets))
    s = data.draw(arrays(np.float64, n, elements=st.floats(0.01, 3)))
    curve = sharpness_cp_curve(y, c, s)
    assert np.all(np.diff(curve.cp) >= 0)
    assert np.all(np.diff(curve.sharpness) <= 0)
    assert 0.0 <= curve.auc <= 1.0


@given(vec(elements=st.floats(0, 1)), st.data())
def test_auc_bounded(cp, data):
    sh = data.draw(arrays(np.float64, len(cp), elements=st.floats(0, 1)))
    assert 0.0 <= curve_auc(cp, sh) <= 1.0


@given(st.integers(0, 5000), st.lists(st.floats(0.01, 1), min_size=3, max_size=3))
def test_split_counts_sum(n, raw):
    fractions = np.asarray(raw) / sum(raw)
    counts = split_counts(n, fractions)
    assert sum(counts) == n
    assert all(abs(c - n * f) < 1 for c, f in zip(counts, fractions))


@settings(max_examples=25)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.integers(1, 3), st.data())
def test_dataset_round_trip(n, w, h, d, data):
    x = data.draw(arrays(np.float32, (n, w, h, d), elements=st.floats(-5, 5, width=32)))
    y = data.draw(arrays(np.float64, (2, n), elements=targets))
    ds = PairedDataset(x, x[:, ::-1].copy(), y[0], y[1])
    back = parse_dataset(dataset_bytes(ds))
    assert np.array_equal(back.x_r, ds.x_r) and np.array_equal(back.x_l, ds.x_l)
    assert np.array_equal(back.y_r, ds.y_r) and np.array_equal(back.y_l, ds.y_l)


@given(arrays(np.float64, (3, 4, 2), elements=finite))
def test_lateral_flip_involution(x):
    assert np.array_equal(lateral_flip(lateral_flip(x)), x)


@settings(max_examples=20)
@given(st.integers(0, 2 ** 31), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_is_linear_in_input(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 1, 4, 3, 3, 2))
    k = Tensor(rng.normal(size=(3, 3, 3, 2, 2)))
    lhs = conv3d(Tensor(a * x + b * y), k).data
    rhs = a * conv3d(Tensor(x), k).data + b * conv3d(Tensor(y), k).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
