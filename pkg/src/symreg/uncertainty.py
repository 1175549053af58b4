"""Symmetric Monte-Carlo dropout prediction intervals.

For one input pair, ``n`` stochastic passes give right/left samples.  The
plain MC intervals are their population SDs; the symmetric hint is the mean
absolute right-left gap, added to each side with weights ``gamma_r`` and
``gamma_l`` chosen on validation data.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from symreg.errors import ConfigError, NumericError
from symreg.metrics import CurveConfig, sharpness_cp_curve

INTERVAL_COLUMNS = ("case_id", "y_r", "y_l", "y_r_hat", "y_l_hat", "sigma_r", "sigma_l",
                    "sigma_sym", "sigma_r_sym", "sigma_l_sym")


@dataclass
class McConfig:
    n: int = 30
    gamma_r: float = 0.0
    gamma_l: float = 0.0
    seed: int = 0
    # attach gamma_l to the right interval and gamma_r to the left instead
    crossed: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"MC sampling needs n >= 2, got {self.n}")
        for name in ("gamma_r", "gamma_l"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class McSamples:
    """``pairs[t] = (y_r_hat^t, y_l_hat^t)`` for t = 1..n."""

    pairs: np.ndarray

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(self.pairs)):
            raise NumericError("non-finite MC sample")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def right(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def left(self) -> np.ndarray:
        return self.pairs[:, 1]


@dataclass
class IntervalResult:
    y_r: float
    y_l: float
    sigma_r: float
    sigma_l: float
    sigma_sym: float
    sigma_r_sym: float
    sigma_l_sym: float


def _case_rng(seed: int, case_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, case_id])


def mc_sample(model, x_r, x_l, n: int = 30, seed: int = 0, case_id: int = 0) -> McSamples:
    """``n`` paired forward passes in mc mode; masks come from the stream (seed, case_id).

    The conv stages are deterministic, so their output is computed once and
    only the dropout + head is re-run per pass.
    """
    if n < 2:
        raise ConfigError(f"MC sampling needs n >= 2, got {n}")
    f_r, f_l = model.pair_features(np.asarray(x_r)[None] if np.ndim(x_r) == 3 else x_r,
                                   np.asarray(x_l)[None] if np.ndim(x_l) == 3 else x_l)
    return _passes(model, f_r, f_l, n, _case_rng(seed, case_id))


def _passes(model, f_r, f_l, n, rng) -> McSamples:
    out = np.empty((n, 2))
    for t in range(n):
        p_r, p_l = model.pair_head(f_r, f_l, "mc", rng)
        out[t] = p_r.item(), p_l.item()
    return McSamples(out)


def mc_sample_set(model, x_r, x_l, n: int = 30, seed: int = 0, batch: int = 64) -> np.ndarray:
    """MC samples for every case of a set, shape (cases, n, 2); case i uses stream (seed, i)."""
    if n < 2:
        raise ConfigError(f"MC sampling needs n >= 2, got {n}")
    out = np.empty((len(x_r), n, 2))
    for start in range(0, len(x_r), batch):
        f_r, f_l = model.pair_features(x_r[start:start + batch], x_l[start:start + batch])
        for j in range(f_r.shape[0]):
            c = start + j
            out[c] = _passes(model, f_r[j:j + 1], f_l[j:j + 1], n, _case_rng(seed, c)).pairs
    return out


def mc_stats(samples) -> Tuple[float, float, float, float]:
    """Means and population SDs (divide by n) of the right and left samples."""
    pairs = samples.pairs if isinstance(samples, McSamples) else np.asarray(samples, dtype=np.float64)
    if len(pairs) < 2:
        raise ConfigError("mc_stats needs at least two samples")
    mean = pairs.mean(axis=0)
    sd = np.sqrt(np.mean((pairs - mean) ** 2, axis=0))
    return float(mean[0]), float(mean[1]), float(sd[0]), float(sd[1])


def sigma_sym(samples) -> float:
    """Mean absolute right-left gap over the MC passes."""
    pairs = samples.pairs if isinstance(samples, McSamples) else np.asarray(samples, dtype=np.float64)
    if len(pairs) < 1:
        raise ConfigError("sigma_sym needs at least one sample")
    return float(np.mean(np.abs(pairs[:, 0] - pairs[:, 1])))


def combined_intervals(stats, s_sym: float, cfg: McConfig) -> IntervalResult:
    y_r, y_l, s_r, s_l = stats
    g_right, g_left = (cfg.gamma_l, cfg.gamma_r) if cfg.crossed else (cfg.gamma_r, cfg.gamma_l)
    return IntervalResult(y_r, y_l, s_r, s_l, s_sym, s_r + g_right * s_sym, s_l + g_left * s_sym)


def predict_with_uncertainty(model, x_r, x_l, cfg: Optional[McConfig] = None, case_id: int = 0) -> IntervalResult:
    cfg = cfg or McConfig()
    samples = mc_sample(model, x_r, x_l, cfg.n, cfg.seed, case_id)
    return combined_intervals(mc_stats(samples), sigma_sym(samples), cfg)


@dataclass
class SetIntervals:
    """Vectorized interval components for a whole set of cases."""

    mean_r: np.ndarray
    mean_l: np.ndarray
    sigma_r: np.ndarray
    sigma_l: np.ndarray
    sigma_sym: np.ndarray

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "SetIntervals":
        mean = samples.mean(axis=1)
        sd = np.sqrt(np.mean((samples - mean[:, None, :]) ** 2, axis=1))
        gap = np.mean(np.abs(samples[:, :, 0] - samples[:, :, 1]), axis=1)
        return cls(mean[:, 0], mean[:, 1], sd[:, 0], sd[:, 1], gap)

    def widths(self, gamma_r: float, gamma_l: float, crossed: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        if crossed:
            gamma_r, gamma_l = gamma_l, gamma_r
        return self.sigma_r + gamma_r * self.sigma_sym, self.sigma_l + gamma_l * self.sigma_sym

    def pooled(self, gamma_r: float, gamma_l: float, crossed: bool = False):
        """(centers, widths) with right cases first, then left."""
        w_r, w_l = self.widths(gamma_r, gamma_l, crossed)
        return np.concatenate([self.mean_r, self.mean_l]), np.concatenate([w_r, w_l])

    def to_csv(self, y_r, y_l, gamma_r: float, gamma_l: float, crossed: bool = False,
               case_ids: Optional[Sequence] = None) -> str:
        w_r, w_l = self.widths(gamma_r, gamma_l, crossed)
        ids = range(len(self.mean_r)) if case_ids is None else case_ids
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(INTERVAL_COLUMNS)
        for i, c in enumerate(ids):
            w.writerow([c] + [repr(float(v)) for v in (
                y_r[i], y_l[i], self.mean_r[i], self.mean_l[i], self.sigma_r[i], self.sigma_l[i],
                self.sigma_sym[i], w_r[i], w_l[i])])
        return buf.getvalue()


def pooled_truths(y_r, y_l) -> np.ndarray:
    return np.concatenate([np.asarray(y_r, dtype=np.float64), np.asarray(y_l, dtype=np.float64)])


@dataclass
class GammaCalibration:
    gamma_r: float
    gamma_l: float
    auc: float
    table: list  # (gamma_r, gamma_l, auc) for every grid pair


def calibrate_gamma_from_intervals(intervals: SetIntervals, y_r, y_l, grid: Sequence[float],
                                   curve_cfg: Optional[CurveConfig] = None,
                                   crossed: bool = False) -> GammaCalibration:
    """Exhaustive search of grid x grid for the highest pooled sharpness-CP AUC.

    Ties go to the pair met first in ascending (gamma_r, gamma_l) order.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ConfigError("gamma grid is empty")
    if any(not 0.0 <= g <= 1.0 for g in grid):
        raise ConfigError(f"gamma grid values must lie in [0, 1], got {grid}")
    truths = pooled_truths(y_r, y_l)
    table = []
    best = None
    for g_r, g_l in itertools.product(grid, grid):
        centers, widths = intervals.pooled(g_r, g_l, crossed)
        auc = sharpness_cp_curve(truths, centers, widths, curve_cfg).auc
        table.append((g_r, g_l, auc))
        if best is None or auc > best[2]:
            best = (g_r, g_l, auc)
    return GammaCalibration(best[0], best[1], best[2], table)


def calibrate_gamma(model, val_set, grid: Sequence[float], cfg: Optional[McConfig] = None,
                    curve_cfg: Optional[CurveConfig] = None) -> Tuple[float, float]:
    """Pick (gamma_r, gamma_l) on validation data by sharpness-CP AUC."""
    cfg = cfg or McConfig()
    samples = mc_sample_set(model, val_set.x_r, val_set.x_l, cfg.n, cfg.seed)
    cal = calibrate_gamma_from_intervals(SetIntervals.from_samples(samples), val_set.y_r, val_set.y_l,
                                         grid, curve_cfg, cfg.crossed)
    return cal.gamma_r, cal.gamma_l
