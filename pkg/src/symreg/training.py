"""Mini-batch training of paired regressors and hyperparameter sweeps."""
from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from symreg.autodiff import OptimizerState, adam_step
from symreg.backbone import BackboneConfig
from symreg.data import PairedDataset
from symreg.errors import ConfigError, NumericError, TrainingError
from symreg.model import SBR_MAX, SymmetricLossConfig, build_model, loss_terms

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("epoch", "train_reg", "train_sym", "train_final",
                  "val_reg", "val_sym", "val_final", "val_mae")
SWEEP_COLUMNS = ("param", "value", "val_mae", "test_mae", "best_epoch")


@dataclass
class TrainConfig:
    alpha: float = 0.04
    beta: float = 1.0
    sbr_max: float = SBR_MAX
    lr: float = 1e-4
    batch: int = 8
    epochs: int = 20
    seed: int = 0
    optimizer: str = "adam"
    lr_schedule: str = "constant"
    plan: tuple = (8, 16, 32, 64)
    dims: tuple = (16, 16, 8)
    dropout_rate: float = 0.5
    dtype: str = "float64"
    unpaired: bool = False
    init_bias_to_mean: bool = True

    def __post_init__(self):
        self.plan = tuple(int(c) for c in self.plan)
        self.dims = tuple(int(e) for e in self.dims)
        if self.batch < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError(f"invalid batch/epochs/lr: {self.batch}, {self.epochs}, {self.lr}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        SymmetricLossConfig(self.alpha, self.beta, self.sbr_max)

    def lr_at(self, step: int, total: int) -> float:
        """Learning rate for 0-based ``step`` out of ``total`` updates."""
        if self.lr_schedule == "constant" or total <= 1:
            return self.lr
        return 0.5 * self.lr * (1.0 + np.cos(np.pi * step / total))

    @property
    def loss(self) -> SymmetricLossConfig:
        return SymmetricLossConfig(self.alpha, 0.0 if self.unpaired else self.beta, self.sbr_max)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(patch_dims=self.dims, channel_plan=self.plan,
                              dropout_rate=self.dropout_rate, dtype=self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plan"] = list(self.plan)
        d["dims"] = list(self.dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    rows: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("inf")
    initial_val_mae: float = float("nan")
    seed: int = 0
    beta: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r["epoch"]] + [repr(float(r[c])) for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()

    @property
    def final_val_mae(self) -> float:
        return self.rows[-1]["val_mae"] if self.rows else self.initial_val_mae


def predict_pairs(model, x_r, x_l, batch: int = 64):
    """Eval-mode predictions for a whole set, as float64 arrays."""
    out_r, out_l = [], []
    for start in range(0, len(x_r), batch):
        p_r, p_l = model.forward_pair(x_r[start:start + batch], x_l[start:start + batch], mode="eval")
        out_r.append(p_r.data.astype(np.float64))
        out_l.append(p_l.data.astype(np.float64))
    if not out_r:
        return np.empty(0), np.empty(0)
    return np.concatenate(out_r), np.concatenate(out_l)


def evaluate_losses(model, ds: PairedDataset, cfg: SymmetricLossConfig, batch: int = 64) -> dict:
    p_r, p_l = predict_pairs(model, ds.x_r, ds.x_l, batch)
    terms = loss_terms((p_r, p_l), (ds.y_r, ds.y_l), cfg)
    mae = 0.5 * (np.mean(np.abs(p_r - ds.y_r)) + np.mean(np.abs(p_l - ds.y_l)))
    return {"reg": terms.reg.item(), "sym": terms.sym.item(), "final": terms.final.item(), "mae": float(mae)}


def _sgd_step(params, grads, state: OptimizerState) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    for name, p in params.items():
        if name in grads:
            p.data -= state.lr * grads[name]


def train(model, train_set: PairedDataset, val_set: PairedDataset, cfg: TrainConfig,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainReport:
    """Minimize ``L_reg + beta * L_sym`` with shuffled mini-batches.

    The parameters with the lowest validation MAE are restored at the end.
    Identical seeds reproduce the loss trace exactly.
    """
    loss_cfg = cfg.loss
    for name, part in (("train", train_set), ("val", val_set)):
        if not (np.all(np.isfinite(part.y_r)) and np.all(np.isfinite(part.y_l))):
            raise NumericError(f"non-finite targets in the {name} set")
    rng = np.random.default_rng([cfg.seed, 1])
    if hasattr(model, "reseed"):
        model.reseed([cfg.seed, 2])
    if cfg.init_bias_to_mean and hasattr(model, "init_output_bias"):
        model.init_output_bias(float(np.mean(np.concatenate([train_set.y_r, train_set.y_l]))))
    params = model.params
    state = OptimizerState(lr=cfg.lr)
    step = adam_step if cfg.optimizer == "adam" else _sgd_step

    report = TrainReport(seed=cfg.seed, beta=loss_cfg.beta)
    model.set_mode("eval")
    first = evaluate_losses(model, val_set, loss_cfg)
    report.initial_val_mae = first["mae"]
    report.best_val_mae = first["mae"]
    best = model.copy_params()
    n = len(train_set)
    total_steps = cfg.epochs * -(-n // cfg.batch)
    for epoch in range(1, cfg.epochs + 1):
        model.set_mode("train")
        order = rng.permutation(n)
        sums = np.zeros(3)
        for b, start in enumerate(range(0, n, cfg.batch)):
            idx = np.sort(order[start:start + cfg.batch])
            try:
                preds = model.forward_pair(train_set.x_r[idx], train_set.x_l[idx])
            except NumericError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, batch {b}") from exc
            terms = loss_terms(preds, (train_set.y_r[idx], train_set.y_l[idx]), loss_cfg)
            value = terms.final.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            for p in params.values():
                p.grad = None
            terms.final.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            state.lr = cfg.lr_at(state.step, total_steps)
            try:
                step(params, grads, state)
            except TrainingError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, batch {b}") from exc
            w = len(idx) / n
            sums += w * np.array([terms.reg.item(), terms.sym.item(), value])
        model.set_mode("eval")
        val = evaluate_losses(model, val_set, loss_cfg)
        row = {"epoch": epoch, "train_reg": sums[0], "train_sym": sums[1],
               "train_final": sums[0] + loss_cfg.beta * sums[1],
               "val_reg": val["reg"], "val_sym": val["sym"], "val_final": val["final"],
               "val_mae": val["mae"]}
        report.rows.append(row)
        logger.info("epoch %d train %.4f val_mae %.4f", epoch, row["train_final"], val["mae"])
        if on_epoch is not None:
            on_epoch(row)
        if val["mae"] < report.best_val_mae:
            report.best_val_mae = val["mae"]
            report.best_epoch = epoch
            best = model.copy_params()
    model.load_params(best)
    return report


def fit(cfg: TrainConfig, dataset: PairedDataset):
    """Build a model from ``cfg`` and train it on the dataset's train/val splits."""
    model = build_model(cfg.backbone_config(), seed=cfg.seed, unpaired=cfg.unpaired)
    report = train(model, dataset.subset("train"), dataset.subset("val"), cfg)
    return model, report


def split_mae(model, ds: PairedDataset) -> float:
    p_r, p_l = predict_pairs(model, ds.x_r, ds.x_l)
    return float(0.5 * (np.mean(np.abs(p_r - ds.y_r)) + np.mean(np.abs(p_l - ds.y_l))))


def log_grid(lo: float, hi: float, count: int) -> List[float]:
    """``count`` log-spaced values from ``lo`` to ``hi`` inclusive."""
    if count < 1 or lo <= 0 or hi <= 0:
        raise ConfigError(f"log grid needs positive bounds and count >= 1, got {lo}:{hi}:{count}")
    return [float(v) for v in np.geomspace(lo, hi, count)]


@dataclass
class SweepResult:
    param: str
    rows: List[dict]
    best_value: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([self.param, repr(r["value"]), repr(r["val_mae"]), repr(r["test_mae"]), r["best_epoch"]])
        return buf.getvalue()


def _sweep_one(args):
    param, value, cfg, dataset = args
    run_cfg = replace(cfg, **{param: value})
    model, report = fit(run_cfg, dataset)
    tmae = split_mae(model, dataset.subset("test")) if dataset.has_split("test") else float("nan")
    return {"value": float(value), "val_mae": report.best_val_mae, "test_mae": tmae,
            "best_epoch": report.best_epoch}


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SYMREG_THREADS", "1")))
    except ValueError:
        return 1


def sweep(param: str, grid: Sequence[float], cfg: TrainConfig, dataset: PairedDataset) -> SweepResult:
    """One training run per grid value with the same seed; picks the lowest validation MAE."""
    if param not in ("alpha", "beta"):
        raise ConfigError(f"sweep parameter must be 'alpha' or 'beta', got {param!r}")
    grid = [float(v) for v in grid]
    if not grid:
        raise ConfigError("sweep grid is empty")
    jobs = [(param, v, cfg, dataset) for v in grid]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    best = min(range(len(rows)), key=lambda i: (rows[i]["val_mae"], i))
    return SweepResult(param, rows, rows[best]["value"])
