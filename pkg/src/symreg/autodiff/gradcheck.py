"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from symreg.autodiff.ops import record_decisions
from symreg.autodiff.tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_param: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    failures: list = field(default_factory=list)
    # entries whose +/-h evaluations changed a ReLU gate, pool argmax or clip
    # gate; finite differences straddle a kink there and are not compared
    skipped: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-3,
               tolerance: float = 1e-4, max_entries: Optional[int] = None,
               rng: Optional[np.random.Generator] = None, skip_kinks: bool = False) -> GradCheckReport:
    """Compare backward gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values and
    be deterministic (dropout in eval mode).  With ``max_entries`` set, that
    many randomly chosen entries are checked per parameter; otherwise all.
    With ``skip_kinks``, an entry whose perturbed evaluations make a different
    discrete choice than the base evaluation is listed in ``skipped`` instead
    of being compared.
    """
    for p in params.values():
        p.grad = None
    with record_decisions() as base:
        loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(0.0, tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            with record_decisions() as up_choices:
                up = loss_fn().item()
            flat[i] = orig - h
            with record_decisions() as down_choices:
                down = loss_fn().item()
            flat[i] = orig
            if skip_kinks and not (_same(base, up_choices) and _same(base, down_choices)):
                report.skipped.append((name, int(i)))
                continue
            numeric = (up - down) / (2.0 * h)
            err = relative_error(float(analytic[name].reshape(-1)[i]), numeric)
            worst = max(worst, err)
            report.checked += 1
            if err >= tolerance:
                report.failures.append((name, int(i), float(analytic[name].reshape(-1)[i]), numeric))
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report


def _same(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
