"""Command-line entry point.

Structured results go to stdout as JSON; diagnostics go to stderr.

Exit codes: 0 success, 1 unexpected error, 2 configuration or usage error,
3 data error, 4 training divergence, 5 gradient mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import matrix_io
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, to_text
from .data import DataError, WindowSpec, load_series, make_windows, split_by_fraction, split_series, stack_windows
from .evaluation import FORECAST_COLUMNS, MetricReport, evaluate_horizon, persistence_forecast
from .numerics import inject_backward_fault, no_grad
from .numerics.gradcheck import primitive_suite
from .training import DivergenceError, fit

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_GRADIENT = 0, 1, 2, 3, 4, 5

log = logging.getLogger("sefc")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _emit(payload):
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _config(args, overrides=()):
    cfg = load_config(getattr(args, "config", None), list(overrides) + list(getattr(args, "set", None) or []))
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def split_frame(frame, split):
    if all(0 <= s <= 1 for s in split):
        return split_by_fraction(frame, split)
    return split_series(frame, split)


def _windows(part, cfg: RunConfig, name):
    spec = WindowSpec(cfg.data.context_length, cfg.data.horizon, cfg.data.stride, cfg.data.patch_len)
    try:
        return list(make_windows(part, spec, cfg.data.channel_independent, cfg.data.eps))
    except DataError as exc:
        raise DataError(f"{name} split: {exc}") from None


def _load_splits(path, cfg: RunConfig):
    path = path or cfg.data.path
    if not path:
        raise DataError("no dataset given (use --data or data.path)")
    frame = load_series(path)
    cfg.data.path = str(path)
    return split_frame(frame, cfg.data.split)


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(to_text(cfg), encoding="utf-8")
    return out


def native_test_scores(model, windows):
    """Native-horizon MSE of the model and of last-value persistence, in normalized space."""
    batch = stack_windows(windows)
    with no_grad():
        pred = model(batch.context.astype(model.dtype), deterministic=True).data.astype(np.float64)
    base = persistence_forecast(batch.context, batch.target.shape[1])
    return {"mse": float(np.mean((pred - batch.target) ** 2)),
            "persistence_mse": float(np.mean((base - batch.target) ** 2)),
            "n_windows": len(windows)}


def train_model(cfg: RunConfig, splits):
    from .model import SeLLM

    train_part, val_part, test_part = splits
    train_w, val_w = _windows(train_part, cfg, "train"), _windows(val_part, cfg, "validation")
    model = SeLLM(cfg)
    report = fit(model, train_w, val_w, cfg.train, seed=cfg.seed, workers=cfg.workers, log=log.info)
    test = native_test_scores(model, _windows(test_part, cfg, "test")) if len(test_part) else None
    return model, report, test


def cmd_train(args):
    cfg = _config(args)
    splits = _load_splits(args.data, cfg)
    out = _out_dir(cfg)
    model, report, test = train_model(cfg, splits)
    save_checkpoint(out / "checkpoint.selm", model, extra={"train_fingerprint": report.fingerprint()})
    payload = {"command": "train", "train": report.to_dict(), "fingerprint": report.fingerprint(), "test": test}
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    _emit({**payload, "out_dir": str(out)})
    return EXIT_OK


def _parse_horizons(text):
    try:
        hs = tuple(int(h) for h in str(text).split(",") if h.strip())
    except ValueError:
        raise ConfigError(f"--horizons: cannot parse {text!r}") from None
    if not hs or any(h < 1 for h in hs):
        raise ConfigError(f"--horizons: every horizon must be >= 1, got {text!r}")
    return hs


def evaluate_model(model, cfg: RunConfig, frame, horizons, dataset=""):
    results = {}
    for h in horizons:
        results[h] = evaluate_horizon(model, frame, h, cfg.eval.seasonal_period, cfg.eval.stride,
                                      cfg.eval.max_windows, dataset, cfg.data.eps)
    return results


def _write_metrics(path, reports):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MetricReport.header() + "\n")
        for r in reports:
            fh.write(r.to_row() + "\n")


def cmd_evaluate(args):
    try:
        model, manifest = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    cfg = model.cfg
    if args.out:
        cfg.out_dir = args.out
    horizons = _parse_horizons(args.horizons) if args.horizons else tuple(cfg.eval.horizons)
    data_path = args.data or cfg.data.path
    _, _, test_part = _load_splits(data_path, cfg)
    out = _out_dir(cfg)
    results = evaluate_model(model, cfg, test_part, horizons, dataset=Path(data_path).stem)
    with open(out / "forecasts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FORECAST_COLUMNS)
        for res in results.values():
            w.writerows(res.forecast_rows(cfg.eval.seasonal_period))
    reports = [res.report for res in results.values()]
    _write_metrics(out / "metrics.csv", reports)
    payload = {"command": "evaluate", "checkpoint": str(args.checkpoint), "reports": [r.to_dict() for r in reports]}
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    _emit(payload)
    return EXIT_OK


ABLATION_ROWS = (
    ("baseline", {"model.use_tscc": False, "model.use_adapter": False}),
    ("+tscc", {"model.use_tscc": True, "model.use_adapter": False}),
    ("+tscc+adapter", {"model.use_tscc": True, "model.use_adapter": True}),
)


def run_ablation(data_path, base_cfg: RunConfig, horizons):
    """Train the three configurations on identical data and batches; returns (rows, digests)."""
    from .config import parse_config, set_key

    rows, digests = [], {}
    splits = _load_splits(data_path, base_cfg)
    for name, keys in ABLATION_ROWS:
        cfg = parse_config(to_text(base_cfg))
        for k, v in keys.items():
            set_key(cfg, k, v)
        cfg.validate()
        log.info("ablation: training %s", name)
        model, report, _ = train_model(cfg, splits)
        digests[name] = report.batch_digest
        results = evaluate_model(model, cfg, splits[2], horizons, dataset=Path(data_path).stem)
        for h, res in results.items():
            rows.append({"configuration": name, "horizon": h, "mse": res.report.mse, "mae": res.report.mae,
                         "use_tscc": cfg.model.use_tscc, "use_adapter": cfg.model.use_adapter})
    return rows, digests


def cmd_ablate(args):
    cfg = _config(args)
    horizons = _parse_horizons(args.horizons) if args.horizons else tuple(cfg.eval.horizons)
    data_path = args.data or cfg.data.path
    out = _out_dir(cfg)
    rows, digests = run_ablation(data_path, cfg, horizons)
    parity = len(set(digests.values())) == 1
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["configuration", "horizon", "mse", "mae"])
        for r in rows:
            w.writerow([r["configuration"], r["horizon"], repr(r["mse"]), repr(r["mae"])])
    payload = {"command": "ablate", "horizons": list(horizons), "rows": rows,
               "batch_digests": digests, "batch_parity": parity}
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    _emit(payload)
    return EXIT_OK


def cmd_gradcheck(args):
    from .config import tiny_config, parse_config
    from .model import model_gradient_check

    if args.config:
        cfg = _config(args)
    else:
        cfg = tiny_config()
        for item in args.set or []:
            k, _, v = item.partition("=")
            parse_config(f"{k} = {v}", cfg)
        cfg.validate()
    try:
        with inject_backward_fault(args.fault, args.fault_factor) if args.fault else nullcontext():
            result = model_gradient_check(cfg, step=args.step, tol=args.tol)
            failing_ops = []
            if not result.report.passed:
                failing_ops = sorted(op for op, r in primitive_suite(step=1e-6, tol=args.tol).items()
                                     if not r.passed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    rep = result.report
    payload = {"command": "gradcheck", "passed": rep.passed, "max_rel_err": rep.max_rel_err,
               "worst_parameter": rep.worst, "tol": args.tol, "step": args.step,
               "coordinates": result.n_coordinates, "seconds": result.seconds,
               "failing_ops": failing_ops, "per_parameter": rep.per_tensor}
    _emit(payload)
    if not rep.passed:
        where = f"; primitive rules failing in isolation: {', '.join(failing_ops)}" if failing_ops else \
            "; every primitive passes in isolation"
        log.error("gradient mismatch at %s (max relative error %.3g > %g)%s", rep.worst, rep.max_rel_err,
                  args.tol, where)
        return EXIT_GRADIENT
    return EXIT_OK


def cmd_export_embeddings(args):
    try:
        model, _ = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    cfg = model.cfg
    if model.tscc is None:
        raise CliError("export-embeddings needs a model with the TSCC module enabled", EXIT_CONFIG)
    _, _, test_part = _load_splits(args.data or cfg.data.path, cfg)
    windows = _windows(test_part, cfg, "test")[:args.batch]
    batch = stack_windows(windows)
    with no_grad():
        out = model.forward(batch.context.astype(model.dtype), deterministic=True)
    B, N = out.tscc.GA.shape[:2]
    mats = {
        "GA": out.tscc.GA.data.reshape(B * N, -1),
        "GC": out.tscc.GC.data.reshape(B * N, -1),
        "M": out.tscc.M.data.reshape(B * N, -1),
        "l2": out.prototypes.data,
    }
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, mat in mats.items():
        path = dest / f"{name}.selm"
        matrix_io.write_matrix(path, mat, version=2)
        files[name] = {"path": str(path), "shape": list(mat.shape)}
    _emit({"command": "export-embeddings", "batch": B, "segments": N, "files": files})
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="sefc", description="Semantic-enhanced frozen-backbone forecasting.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    t = sub.add_parser("train", help="train and write checkpoint, report and resolved config")
    common(t)
    t.add_argument("--data", help="csv/tsv series file")
    t.add_argument("--out", help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="roll out to each horizon on the test split and score")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--horizons", help="comma separated, e.g. 96,192,336,720")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="baseline / +tscc / +tscc+adapter comparison")
    common(a)
    a.add_argument("--data")
    a.add_argument("--horizons")
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    g = sub.add_parser("gradcheck", help="finite-difference check of the composed model")
    common(g)
    g.add_argument("--step", type=float, default=1e-4)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--fault", help="scale the backward rule of this op (diagnostic)")
    g.add_argument("--fault-factor", type=float, default=1.5)
    g.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-embeddings", help="write GA, GC, M and l2 as portable matrix files")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data")
    x.add_argument("--out", required=True)
    x.add_argument("--batch", type=int, default=4)
    x.set_defaults(func=cmd_export_embeddings)

    s = sub.add_parser("synthetic", help="write the noisy sinusoid series used by the smoke test")
    s.add_argument("--out", required=True)
    s.add_argument("--length", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synthetic)
    return p


def cmd_synthetic(args):
    from .data import synthetic_sinusoid, write_series

    write_series(args.out, synthetic_sinusoid(args.length, args.seed))
    _emit({"command": "synthetic", "path": args.out, "length": args.length, "seed": args.seed})
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except DivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
