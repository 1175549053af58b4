"""Command-line entry point: gen, train, eval, sweep, uq.

Exit codes: 0 success, 2 usage/config, 3 numeric failure, 4 format/IO.
Settings resolve as CLI flag > JSON config (--config) > built-in default, and
every run writes ``<output>.provenance.json`` with the resolved settings.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from symreg import __version__
from symreg.checkpoint import load_checkpoint, save_checkpoint
from symreg.data import (DEFAULT_FRACTIONS, GenConfig, gen_dataset, load_dataset, save_dataset,
                         split_by_counts, summary, with_split)
from symreg.errors import ConfigError, FormatError, NumericError, SymregError
from symreg.evaluation import PLAIN_LABEL, SYMMETRIC_LABEL, evaluate_all
from symreg.metrics import THRESHOLD_LEFT, THRESHOLD_RIGHT, CurveConfig, sharpness_cp_curve
from symreg.training import TrainConfig, fit, log_grid, sweep
from symreg.uncertainty import (McConfig, SetIntervals, calibrate_gamma_from_intervals, mc_sample_set,
                                pooled_truths)

EXIT_USAGE, EXIT_NUMERIC, EXIT_FORMAT = 2, 3, 4
DEFAULT_GAMMA_GRID = [round(0.1 * i, 10) for i in range(11)]

log = logging.getLogger("symreg")


class UsageError(SymregError):
    pass


def _ints(text: str, sep: str = ",") -> tuple:
    try:
        return tuple(int(v) for v in text.lower().replace("x", sep).split(sep) if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers separated by '{sep}' or 'x', got {text!r}") from exc


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _log_grid(text: str) -> list:
    try:
        lo, hi, count = text.split(":")
        return log_grid(float(lo), float(hi), int(count))
    except (ValueError, ConfigError) as exc:
        raise argparse.ArgumentTypeError(f"expected lo:hi:count, got {text!r}") from exc


def _load_json(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {path} is not valid JSON: {exc}") from exc


def _merge(base: dict, file_cfg: dict, flags: dict) -> dict:
    out = dict(base)
    out.update(file_cfg)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _write(path, text_or_bytes) -> None:
    p = Path(path)
    try:
        if isinstance(text_or_bytes, bytes):
            p.write_bytes(text_or_bytes)
        else:
            p.write_text(text_or_bytes)
    except OSError as exc:
        raise FormatError(f"cannot write {p}: {exc}") from exc


def _provenance(out_path, command: str, resolved: dict) -> None:
    record = {"command": command, "version": __version__, "config": resolved}
    _write(str(out_path) + ".provenance.json", json.dumps(record, indent=2, sort_keys=True) + "\n")


def _sibling(path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _dataset(path):
    try:
        return load_dataset(path)
    except OSError as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}") from exc


def _model(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc


def _split(ds, name: str):
    if not ds.has_split(name):
        raise ConfigError(f"dataset has no {name!r} split")
    return ds.subset(name)


# -- subcommands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    file_cfg = _load_json(args.config)
    gen_keys = {"n_samples", "dims", "y_range", "sigma_pair", "blob_radius", "blob_contrast",
                "blob_offset", "noise_sd", "seed"}
    flags = {"n_samples": args.n, "dims": args.dims, "seed": args.seed, "noise_sd": args.noise_sd,
             "sigma_pair": args.sigma_pair}
    resolved = _merge(GenConfig().to_dict(), {k: v for k, v in file_cfg.items() if k in gen_keys}, flags)
    cfg = GenConfig.from_dict(resolved)
    ds = gen_dataset(cfg)
    split_seed = args.split_seed if args.split_seed is not None else file_cfg.get("split_seed", cfg.seed)
    counts = args.split_counts or file_cfg.get("split_counts")
    fractions = args.split or file_cfg.get("split", list(DEFAULT_FRACTIONS))
    if counts:
        ds = split_by_counts(ds, counts, split_seed)
    else:
        ds = with_split(ds, fractions, split_seed)
    try:
        save_dataset(ds, args.out)
    except OSError as exc:
        raise FormatError(f"cannot write {args.out}: {exc}") from exc
    stats = summary(ds)
    _provenance(args.out, "gen", {**cfg.to_dict(), "split_seed": split_seed,
                                  "split_counts": list(counts) if counts else None,
                                  "split": None if counts else list(fractions)})
    print(json.dumps(stats, sort_keys=True))
    return 0


TRAIN_FLAGS = ("alpha", "beta", "lr", "batch", "epochs", "seed", "plan", "dropout_rate", "dtype",
               "lr_schedule", "optimizer")


def _train_config(args, file_cfg: dict, ds) -> TrainConfig:
    flags = {k: getattr(args, k, None) for k in TRAIN_FLAGS}
    if getattr(args, "unpaired", False):
        flags["unpaired"] = True
    resolved = _merge(TrainConfig().to_dict(), file_cfg, flags)
    resolved["dims"] = list(ds.dims)
    return TrainConfig.from_dict(resolved)


def cmd_train(args) -> int:
    ds = _dataset(args.data)
    cfg = _train_config(args, _load_json(args.config), ds)
    _split(ds, "train")
    _split(ds, "val")
    model, report = fit(cfg, ds)
    save_checkpoint(model, args.out, extra={"train_config": cfg.to_dict(), "best_epoch": report.best_epoch})
    report_path = args.report or _sibling(args.out, ".report.csv")
    _write(report_path, report.to_csv())
    _provenance(args.out, "train", cfg.to_dict())
    print(json.dumps({"best_epoch": report.best_epoch, "best_val_mae": report.best_val_mae,
                      "initial_val_mae": report.initial_val_mae, "report": str(report_path)}, sort_keys=True))
    return 0


def _mc_config(args, file_cfg: dict) -> McConfig:
    flags = {"n": args.n_mc, "gamma_r": args.gamma_r, "gamma_l": args.gamma_l, "seed": args.seed}
    base = {"n": 30, "gamma_r": 0.0, "gamma_l": 0.0, "seed": 0, "crossed": False}
    resolved = _merge(base, {k: v for k, v in file_cfg.items() if k in base}, flags)
    return McConfig(**resolved)


def _calibrated(model, ds, mc: McConfig, grid, curve_cfg):
    val = _split(ds, "val")
    samples = mc_sample_set(model, val.x_r, val.x_l, mc.n, mc.seed)
    return calibrate_gamma_from_intervals(SetIntervals.from_samples(samples), val.y_r, val.y_l,
                                          grid, curve_cfg, mc.crossed)


def cmd_eval(args) -> int:
    ds = _dataset(args.data)
    model, _ = _model(args.model)
    file_cfg = _load_json(args.config)
    mc = _mc_config(args, file_cfg)
    test = _split(ds, "test")
    curve_cfg = CurveConfig(span=ds.span)
    if args.calibrate:
        cal = _calibrated(model, ds, mc, args.gamma_grid or DEFAULT_GAMMA_GRID, curve_cfg)
        mc = replace(mc, gamma_r=cal.gamma_r, gamma_l=cal.gamma_l)
    thresholds = (args.threshold_r if args.threshold_r is not None else THRESHOLD_RIGHT,
                  args.threshold_l if args.threshold_l is not None else THRESHOLD_LEFT)
    report = evaluate_all(model, test, mc, thresholds, curve_cfg)
    _write(args.out, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(_sibling(args.out, ".table3.csv"), report.table3_csv())
    _write(_sibling(args.out, ".table5.csv"), report.table5_csv())
    _provenance(args.out, "eval", {"mc": mc.__dict__, "thresholds": list(thresholds),
                                   "calibrate": bool(args.calibrate), "data": str(args.data),
                                   "model": str(args.model)})
    print(json.dumps({"mae_avg": report.prediction["avg"]["mae"], "r_avg": report.prediction["avg"]["r"],
                      "auc": {PLAIN_LABEL: report.uncertainty[PLAIN_LABEL]["pooled"]["auc"],
                              SYMMETRIC_LABEL: report.uncertainty[SYMMETRIC_LABEL]["pooled"]["auc"]},
                      "gamma": list(report.gamma)}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    grid = args.log_grid if args.log_grid is not None else args.grid
    if not grid:
        raise UsageError("sweep needs a non-empty --grid or --log-grid")
    ds = _dataset(args.data)
    file_cfg = _load_json(args.config)
    if args.param == "gamma":
        if not args.model:
            raise UsageError("--param gamma needs --model")
        model, _ = _model(args.model)
        mc = _mc_config(args, file_cfg)
        cal = _calibrated(model, ds, mc, grid, CurveConfig(span=ds.span))
        lines = ["gamma_r,gamma_l,auc"] + [f"{g_r!r},{g_l!r},{auc!r}" for g_r, g_l, auc in cal.table]
        _write(args.out, "\n".join(lines) + "\n")
        resolved = {"param": "gamma", "grid": grid, "mc": mc.__dict__, "best": [cal.gamma_r, cal.gamma_l]}
        best = [cal.gamma_r, cal.gamma_l]
    else:
        cfg = _train_config(args, file_cfg, ds)
        result = sweep(args.param, grid, cfg, ds)
        _write(args.out, result.to_csv())
        resolved = {"param": args.param, "grid": grid, "train": cfg.to_dict(), "best": result.best_value}
        best = result.best_value
    _provenance(args.out, "sweep", resolved)
    print(json.dumps({"param": args.param, "best": best, "rows": len(grid) ** (2 if args.param == "gamma" else 1)}))
    return 0


def cmd_uq(args) -> int:
    ds = _dataset(args.data)
    model, _ = _model(args.model)
    mc = _mc_config(args, _load_json(args.config))
    part = _split(ds, args.split)
    curve_cfg = CurveConfig(span=ds.span)
    if args.calibrate:
        cal = _calibrated(model, ds, mc, args.gamma_grid or DEFAULT_GAMMA_GRID, curve_cfg)
        mc = replace(mc, gamma_r=cal.gamma_r, gamma_l=cal.gamma_l)
    samples = mc_sample_set(model, part.x_r, part.x_l, mc.n, mc.seed)
    intervals = SetIntervals.from_samples(samples)
    _write(args.out, intervals.to_csv(part.y_r, part.y_l, mc.gamma_r, mc.gamma_l, mc.crossed))
    centers, widths = intervals.pooled(mc.gamma_r, mc.gamma_l, mc.crossed)
    curve = sharpness_cp_curve(pooled_truths(part.y_r, part.y_l), centers, widths, curve_cfg)
    curve_path = args.curve or _sibling(args.out, ".curve.csv")
    _write(curve_path, curve.to_csv())
    summary_doc = {"auc": curve.auc, "sharpness_at_95": curve.sharpness_at_95, "k_at_95": curve.k_at_95,
                   "m": curve.m, "truncated": curve.truncated, "gamma": [mc.gamma_r, mc.gamma_l],
                   "n_mc": mc.n, "cases": len(part)}
    _write(_sibling(args.out, ".summary.json"), json.dumps(summary_doc, indent=2, sort_keys=True) + "\n")
    _provenance(args.out, "uq", {"mc": mc.__dict__, "split": args.split, "calibrate": bool(args.calibrate),
                                 "data": str(args.data), "model": str(args.model)})
    print(json.dumps(summary_doc, sort_keys=True))
    return 0


# -- parser ----------------------------------------------------------------------

def _add_train_flags(p) -> None:
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--plan", type=_ints, help="channel plan, e.g. 8,16,32,64")
    p.add_argument("--dropout", dest="dropout_rate", type=float)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--lr-schedule", choices=("constant", "cosine"))
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--unpaired", action="store_true", help="independent right/left regressors (baseline)")


def _add_mc_flags(p) -> None:
    p.add_argument("--n-mc", type=int)
    p.add_argument("--gamma-r", type=float)
    p.add_argument("--gamma-l", type=float)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--dims", type=_ints, help="e.g. 16x16x8")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--sigma-pair", type=float)
    p.add_argument("--split", type=_floats, help="train,val,test fractions")
    p.add_argument("--split-counts", type=_ints, help="exact train,val,test counts")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a paired regressor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--threshold-r", type=float)
    p.add_argument("--threshold-l", type=float)
    p.add_argument("--calibrate", action="store_true", help="choose gammas on the validation split")
    p.add_argument("--gamma-grid", type=_floats)
    _add_mc_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep alpha, beta (training) or gamma (calibration)")
    p.add_argument("--param", required=True, choices=("alpha", "beta", "gamma"))
    grid = p.add_mutually_exclusive_group(required=True)
    grid.add_argument("--grid", type=_floats)
    grid.add_argument("--log-grid", type=_log_grid, help="lo:hi:count, log-spaced")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="checkpoint for --param gamma")
    _add_train_flags(p)
    p.add_argument("--n-mc", type=int)
    p.add_argument("--gamma-r", type=float)
    p.add_argument("--gamma-l", type=float)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("uq", help="symmetric MC intervals and sharpness-CP curve")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="per-case interval CSV")
    p.add_argument("--curve", help="curve CSV (default <out>.curve.csv)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--config")
    p.add_argument("--calibrate", action="store_true")
    p.add_argument("--gamma-grid", type=_floats)
    _add_mc_flags(p)
    p.set_defaults(func=cmd_uq)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (NumericError, FloatingPointError) as exc:
        print(f"symreg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"symreg: format/IO error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"symreg: IO error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, SymregError, ValueError) as exc:
        print(f"symreg: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
