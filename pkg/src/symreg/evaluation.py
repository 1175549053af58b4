"""Full test-set evaluation combining point metrics and MC intervals."""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from symreg.data import PairedDataset
from symreg.metrics import (THRESHOLD_LEFT, THRESHOLD_RIGHT, CurveConfig, MetricsReport,
                            averaged_summary, binary_agreement, sharpness_cp_curve, side_metrics)
from symreg.training import predict_pairs
from symreg.uncertainty import McConfig, SetIntervals, mc_sample_set, pooled_truths

PLAIN_LABEL = "MC+Proposed"
SYMMETRIC_LABEL = "Symmetric MC+Proposed"


def interval_block(intervals: SetIntervals, y_r, y_l, gamma: Tuple[float, float],
                   curve_cfg: CurveConfig, crossed: bool = False) -> dict:
    w_r, w_l = intervals.widths(gamma[0], gamma[1], crossed)
    right = sharpness_cp_curve(y_r, intervals.mean_r, w_r, curve_cfg)
    left = sharpness_cp_curve(y_l, intervals.mean_l, w_l, curve_cfg)
    centers, widths = intervals.pooled(gamma[0], gamma[1], crossed)
    pooled = sharpness_cp_curve(pooled_truths(y_r, y_l), centers, widths, curve_cfg)
    block = {"right": right.summary(), "left": left.summary(), "pooled": pooled.summary()}
    block["avg"] = averaged_summary(block["right"], block["left"])
    block["gamma"] = list(gamma)
    return block, pooled


def evaluate_all(model, test_set: PairedDataset, mc_cfg: Optional[McConfig] = None,
                 thresholds: Tuple[float, float] = (THRESHOLD_RIGHT, THRESHOLD_LEFT),
                 curve_cfg: Optional[CurveConfig] = None,
                 samples: Optional[np.ndarray] = None) -> MetricsReport:
    """Eval-mode predictions feed RMSE/MAE/R and binary agreement; MC means and
    intervals feed the sharpness-CP suite for plain (gamma = 0) and symmetric MC."""
    mc_cfg = mc_cfg or McConfig()
    curve_cfg = curve_cfg or CurveConfig(span=test_set.span)
    p_r, p_l = predict_pairs(model, test_set.x_r, test_set.x_l)
    prediction = side_metrics(p_r, test_set.y_r, p_l, test_set.y_l)
    binary = {
        "right": binary_agreement(p_r, test_set.y_r, thresholds[0]).to_dict(),
        "left": binary_agreement(p_l, test_set.y_l, thresholds[1]).to_dict(),
    }
    if samples is None:
        samples = mc_sample_set(model, test_set.x_r, test_set.x_l, mc_cfg.n, mc_cfg.seed)
    intervals = SetIntervals.from_samples(samples)
    plain, _ = interval_block(intervals, test_set.y_r, test_set.y_l, (0.0, 0.0), curve_cfg)
    gamma = (mc_cfg.gamma_r, mc_cfg.gamma_l)
    sym, sym_curve = interval_block(intervals, test_set.y_r, test_set.y_l, gamma, curve_cfg, mc_cfg.crossed)
    return MetricsReport(prediction, binary, {PLAIN_LABEL: plain, SYMMETRIC_LABEL: sym}, gamma, sym_curve,
                         extra={"thresholds": list(thresholds), "n_mc": mc_cfg.n, "cases": len(test_set)})
