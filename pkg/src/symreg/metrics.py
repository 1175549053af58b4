"""Point-prediction metrics, binary agreement, and interval quality.

Intervals are ``center +/- k * sigma``: coverage counts ``|truth - center| <=
k * sigma`` and sharpness is ``1 - mean(2 * k * sigma) / span`` clamped to
[0, 1], where ``span`` is the target range of the dataset.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from symreg.errors import ConfigError, CorrelationUndefinedError, DimensionError

THRESHOLD_RIGHT = 3.401
THRESHOLD_LEFT = 3.345
CURVE_COLUMNS = ("k", "cp", "sharpness")


def _aligned(*arrays) -> Tuple[np.ndarray, ...]:
    out = tuple(np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays)
    if any(len(a) != len(out[0]) for a in out):
        raise DimensionError(f"length mismatch: {[len(a) for a in out]}")
    return out


def _nonempty(preds, targets) -> Tuple[np.ndarray, np.ndarray]:
    p, t = _aligned(preds, targets)
    if len(p) == 0:
        raise ConfigError("metric of an empty set")
    return p, t


def rmse(preds, targets) -> float:
    p, t = _nonempty(preds, targets)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(preds, targets) -> float:
    p, t = _nonempty(preds, targets)
    return float(np.mean(np.abs(p - t)))


def pearson_r(preds, targets) -> float:
    p, t = _aligned(preds, targets)
    if len(p) < 2:
        raise ConfigError("pearson_r needs at least two points")
    dp, dt = p - p.mean(), t - t.mean()
    sp, st = math.sqrt(float(dp @ dp)), math.sqrt(float(dt @ dt))
    if sp == 0.0 or st == 0.0:
        raise CorrelationUndefinedError("correlation undefined for zero-variance input")
    return float(np.clip((dp @ dt) / (sp * st), -1.0, 1.0))


@dataclass
class BinaryAgreement:
    """Abnormal (value below threshold) is the positive class.

    Sensitivity or specificity is None when the targets hold no positives or
    no negatives respectively.
    """

    accuracy: float
    sensitivity: Optional[float]
    specificity: Optional[float]
    tp: int
    tn: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def binary_agreement(preds, targets, threshold: float) -> BinaryAgreement:
    p, t = _nonempty(preds, targets)
    pred_pos, true_pos = p < threshold, t < threshold
    tp = int(np.sum(pred_pos & true_pos))
    tn = int(np.sum(~pred_pos & ~true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    sens = tp / (tp + fn) if tp + fn else None
    spec = tn / (tn + fp) if tn + fp else None
    return BinaryAgreement((tp + tn) / len(p), sens, spec, tp, tn, fp, fn)


def coverage_probability(truths, centers, widths, k: float) -> float:
    """Fraction of cases with ``|truth - center| <= k * width``."""
    y, c, s = _aligned(truths, centers, widths)
    if len(y) == 0:
        raise ConfigError("coverage of an empty set")
    return float(np.mean(np.abs(y - c) <= k * s))


def sharpness(widths, k: float, span: float) -> float:
    if span <= 0:
        raise ConfigError(f"span must be positive, got {span}")
    s = np.asarray(widths, dtype=np.float64)
    return float(np.clip(1.0 - np.mean(2.0 * k * s) / span, 0.0, 1.0))


@dataclass
class CurveConfig:
    """k runs from 0 in ``step`` increments up to ``m``; m starts at ``m_start``
    and doubles until coverage reaches 1 or ``m_cap`` is hit."""

    span: float = 6.40
    step: float = 0.05
    m_start: float = 1.0
    m_cap: float = 1024.0

    def __post_init__(self):
        if self.span <= 0 or self.step <= 0 or self.m_start <= 0 or self.m_cap < self.m_start:
            raise ConfigError(f"invalid curve config {self}")


@dataclass
class SharpnessCPCurve:
    k: np.ndarray
    cp: np.ndarray
    sharpness: np.ndarray
    auc: float
    m: float
    truncated: bool
    k_at_95: Optional[float]
    sharpness_at_95: Optional[float]

    def points(self):
        return list(zip(self.cp.tolist(), self.sharpness.tolist()))

    def optimal(self) -> Tuple[float, float]:
        """(sharpness, cp) of the point nearest to (1, 1)."""
        i = int(np.argmin((1.0 - self.sharpness) ** 2 + (1.0 - self.cp) ** 2))
        return float(self.sharpness[i]), float(self.cp[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for k, cp, s in zip(self.k, self.cp, self.sharpness):
            w.writerow([repr(float(k)), repr(float(cp)), repr(float(s))])
        return buf.getvalue()

    def summary(self) -> dict:
        s_opt, cp_opt = self.optimal()
        return {"auc": self.auc, "sharpness_at_95": self.sharpness_at_95, "k_at_95": self.k_at_95,
                "optimal_sharpness": s_opt, "optimal_cp": cp_opt, "m": self.m, "truncated": self.truncated}


def curve_auc(cp: Sequence[float], sharp: Sequence[float]) -> float:
    """Trapezoid area under sharpness over CP in [0, 1].

    Points are sorted by CP (stable); the first point is extended back to
    CP = 0 at its own sharpness and a curve ending below CP = 1 is closed
    with the point (1, 0).
    """
    cp = np.asarray(cp, dtype=np.float64)
    sh = np.asarray(sharp, dtype=np.float64)
    if len(cp) == 0:
        return 0.0
    order = np.argsort(cp, kind="stable")
    cp, sh = cp[order], sh[order]
    if cp[0] > 0.0:
        cp, sh = np.concatenate([[0.0], cp]), np.concatenate([[sh[0]], sh])
    if cp[-1] < 1.0:
        cp, sh = np.concatenate([cp, [1.0]]), np.concatenate([sh, [0.0]])
    area = float(np.sum(np.diff(cp) * (sh[1:] + sh[:-1]) / 2.0))
    return min(max(area, 0.0), 1.0)


def sharpness_cp_curve(truths, centers, widths, cfg: Optional[CurveConfig] = None) -> SharpnessCPCurve:
    cfg = cfg or CurveConfig()
    y, c, s = _aligned(truths, centers, widths)
    if len(y) == 0:
        raise ConfigError("curve of an empty set")
    if np.any(s < 0):
        raise ConfigError("interval widths must be non-negative")
    resid = np.abs(y - c)
    m = cfg.m_start
    while True:
        if np.all(resid <= m * s) or m >= cfg.m_cap:
            break
        m = min(2.0 * m, cfg.m_cap)
    ks = np.arange(int(round(m / cfg.step)) + 1) * cfg.step
    covered = resid[None, :] <= ks[:, None] * s[None, :]
    cp = covered.mean(axis=1)
    sharp = np.clip(1.0 - 2.0 * ks * s.mean() / cfg.span, 0.0, 1.0)
    hit = np.flatnonzero(cp >= 0.95)
    k95 = float(ks[hit[0]]) if len(hit) else None
    s95 = float(sharp[hit[0]]) if len(hit) else None
    return SharpnessCPCurve(ks, cp, sharp, curve_auc(cp, sharp), float(m), bool(cp[-1] < 1.0), k95, s95)


@dataclass
class MetricsReport:
    prediction: Dict[str, Dict[str, float]]
    binary: Dict[str, dict]
    uncertainty: Dict[str, Dict[str, dict]]
    gamma: Tuple[float, float]
    curve: Optional[SharpnessCPCurve] = None
    extra: dict = field(default_factory=dict)

    @property
    def auc(self) -> float:
        return self.curve.auc if self.curve is not None else float("nan")

    @property
    def sharpness_at_95cp(self) -> Optional[float]:
        return self.curve.sharpness_at_95 if self.curve is not None else None

    def to_dict(self) -> dict:
        return {"prediction": self.prediction, "binary": self.binary, "uncertainty": self.uncertainty,
                "gamma": list(self.gamma), "auc": self.auc, "sharpness_at_95cp": self.sharpness_at_95cp,
                "curve": None if self.curve is None else [[float(a), float(b)] for a, b in self.curve.points()],
                **self.extra}

    def table3_csv(self) -> str:
        cols = ("RMSE", "MAE", "R")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"{m}_{side}" for m in cols for side in ("right", "left", "avg")])
        w.writerow([repr(self.prediction[side][m.lower()]) for m in cols for side in ("right", "left", "avg")])
        return buf.getvalue()

    def table5_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        sides = ("right", "left", "avg")
        w.writerow(["method"] + [f"optimal_sharpness_{s}" for s in sides] + [f"optimal_cp_{s}" for s in sides]
                   + [f"sharpness_at_95cp_{s}" for s in sides] + [f"auc_{s}" for s in sides])
        for label, block in self.uncertainty.items():
            w.writerow([label] + [_fmt(block[s]["optimal_sharpness"]) for s in sides]
                       + [_fmt(block[s]["optimal_cp"]) for s in sides]
                       + [_fmt(block[s]["sharpness_at_95"]) for s in sides]
                       + [_fmt(block[s]["auc"]) for s in sides])
        return buf.getvalue()


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def side_metrics(p_r, y_r, p_l, y_l) -> Dict[str, Dict[str, float]]:
    out = {}
    for side, p, y in (("right", p_r, y_r), ("left", p_l, y_l)):
        out[side] = {"rmse": rmse(p, y), "mae": mae(p, y), "r": _safe_r(p, y)}
    out["avg"] = {m: _mean_or_nan(out["right"][m], out["left"][m]) for m in ("rmse", "mae", "r")}
    return out


def _safe_r(p, y) -> float:
    try:
        return pearson_r(p, y)
    except (CorrelationUndefinedError, ConfigError):
        return float("nan")


def _mean_or_nan(a: Optional[float], b: Optional[float]):
    if a is None or b is None:
        return None
    return 0.5 * (a + b)


def averaged_summary(right: dict, left: dict) -> dict:
    """Average every numeric entry of two per-side summaries."""
    out = {}
    for key in right:
        a, b = right[key], left[key]
        if isinstance(a, bool) or isinstance(b, bool):
            out[key] = bool(a or b)
        elif a is None or b is None:
            out[key] = None
        else:
            out[key] = 0.5 * (a + b)
    return out
