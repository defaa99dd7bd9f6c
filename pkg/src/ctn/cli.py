"""``ctn`` command line: train, eval, predict, sweeps, cross-validation, gradcheck."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import autograd as ag
from . import gradcheck
from .autograd import ContractViolation
from .config import RunConfig, resolve
from .data import load_dataset, normalize, read_image, tile_predict, write_dmap, write_heatmap
from .fixtures import write_fixture
from .metrics import EvalRecord, format_table, kfold_splits, mae, records_csv, records_table, rmse
from .model import CTN, canonical_variant
from .train import evaluate, load_model, save_model, train

log = logging.getLogger("ctn")

# Reference numbers on UCF-QNRF; printed for orientation, never asserted.
CONTEXT_REFERENCE = {0: (108.3, 190.8), 2: (105.7, 184.5), 4: (104.0, 183.0), 6: (102.6, 177.7), 10: (103.0, 176.0)}
ABLATION_REFERENCE = {
    "local-only": (120.2, 218.4),
    "nonlocal-only": (123.5, 206.7),
    "standard-mha": (108.3, 190.8),
    "full-ctn": (102.6, 177.7),
}

_RUN_FLAGS = {
    "manifest": dict(help="dataset manifest (image annotation pairs)"),
    "eval_manifest": dict(help="manifest used for evaluation in train-and-eval commands"),
    "checkpoint": dict(help="checkpoint path"),
    "variant": dict(choices=["full", "local", "nonlocal", "mha", "full-ctn", "local-only", "nonlocal-only", "standard-mha"]),
    "context_m": dict(type=int, help="context half-width m (context = 2m)"),
    "heads": dict(type=int),
    "width": dict(type=int, help="attention width d"),
    "crop": dict(type=int),
    "crops_per_image": dict(type=int),
    "batch": dict(type=int),
    "epochs": dict(type=int),
    "max_iters": dict(type=int, help="stop after this many optimizer steps"),
    "lr": dict(type=float),
    "sigma": dict(type=float, help="Gaussian sigma for density targets, pixels"),
    "tile": dict(type=int, help="tile size for inference"),
    "max_dim": dict(type=int),
    "seed": dict(type=int),
    "init_scheme": dict(choices=["he", "gaussian"]),
    "folds": dict(type=int),
    "out": dict(help="output directory"),
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--profile", choices=["full", "smoke"])
    for key, kw in _RUN_FLAGS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, **kw)


def _run_config(args) -> RunConfig:
    flags = {k: getattr(args, k) for k in _RUN_FLAGS}
    flags["profile"] = args.profile
    return resolve(args.config, flags)


def _out_dir(run: RunConfig) -> Path:
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _eval_samples(run: RunConfig):
    manifest = run.eval_manifest or run.manifest
    return load_dataset(manifest, run.sigma, run.max_dim)


def _train_and_eval(run: RunConfig, samples, eval_samples, tag: str):
    result = train(samples, run)
    records = evaluate(result.model, eval_samples, run.tile)
    log.info("%s: MAE %.4f RMSE %.4f", tag, mae(records), rmse(records))
    return result, records


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    run = _run_config(args)
    if not run.manifest:
        raise ContractViolation("train needs --manifest")
    samples = load_dataset(run.manifest, run.sigma, run.max_dim)
    result = train(samples, run, on_step=lambda i, loss: log.info("iter %d loss %.6e", i, loss))
    out = _out_dir(run)
    ckpt = Path(run.checkpoint) if run.checkpoint else out / "model.ckpt"
    save_model(ckpt, result.model)
    (out / "loss.csv").write_text(result.loss_csv())
    print(f"trained {len(result.losses)} iterations; loss {result.losses[0]:.6e} -> {result.losses[-1]:.6e}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    run = _run_config(args)
    if not run.manifest or not run.checkpoint:
        raise ContractViolation("eval needs --manifest and --checkpoint")
    model = load_model(run.checkpoint)
    samples = load_dataset(run.manifest, run.sigma, run.max_dim)
    records = evaluate(model, samples, run.tile)
    (_out_dir(run) / "metrics.csv").write_text(records_csv(records))
    print(records_table(records))
    return 0


def cmd_predict(args) -> int:
    run = _run_config(args)
    model = load_model(run.checkpoint) if run.checkpoint else CTN(run.model_config(), seed=run.seed)
    image = read_image(args.image)
    pred = tile_predict(model, normalize(image), run.tile)
    out = _out_dir(run)
    stem = Path(args.image).stem
    write_dmap(out / f"{stem}.dmap", pred.density)
    write_heatmap(out / f"{stem}_density.pgm", pred.density)
    print(f"{stem}\tcount {pred.count!r}")
    return 0


def _comparison(rows, out: Path, name: str, header) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    (out / f"{name}.csv").write_text(buf.getvalue())
    print(format_table(rows, header))


def cmd_sweep_context(args) -> int:
    run = _run_config(args)
    if not run.manifest:
        raise ContractViolation("sweep-context needs --manifest")
    m_list = [int(v) for v in args.m_list.split(",") if v.strip()]
    if not m_list:
        raise ContractViolation("--m-list is empty")
    samples = load_dataset(run.manifest, run.sigma, run.max_dim)
    eval_samples = _eval_samples(run)
    rows = []
    for m in m_list:
        sub = replace(run, context_m=m, variant="full-ctn")
        _, records = _train_and_eval(sub, samples, eval_samples, f"m={m}")
        ref_mae, ref_rmse = CONTEXT_REFERENCE.get(2 * m, ("-", "-"))
        label = "standard MHA" if m == 0 else "contextual MHA"
        rows.append((2 * m, m, label, mae(records), rmse(records), ref_mae, ref_rmse))
    _comparison(rows, _out_dir(run), "sweep_context",
                ("context", "m", "attention", "MAE", "RMSE", "ref_MAE", "ref_RMSE"))
    print("ref_* columns: UCF-QNRF figures from full-scale training, not reproducible at desk scale")
    return 0


def cmd_ablate(args) -> int:
    run = _run_config(args)
    if not run.manifest:
        raise ContractViolation("ablate needs --manifest")
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    samples = load_dataset(run.manifest, run.sigma, run.max_dim)
    eval_samples = _eval_samples(run)
    rows = []
    for v in variants:
        sub = replace(run, variant=canonical_variant(v))
        _, records = _train_and_eval(sub, samples, eval_samples, sub.variant)
        ref = ABLATION_REFERENCE[sub.variant]
        rows.append((sub.variant, mae(records), rmse(records), *ref))
    _comparison(rows, _out_dir(run), "ablation", ("variant", "MAE", "RMSE", "ref_MAE", "ref_RMSE"))
    print("ref_* columns: UCF-QNRF figures from full-scale training, not reproducible at desk scale")
    return 0


def cmd_crossval(args) -> int:
    run = _run_config(args)
    if not run.manifest:
        raise ContractViolation("crossval needs --manifest")
    samples = load_dataset(run.manifest, run.sigma, run.max_dim)
    plan = kfold_splits([s.image_id for s in samples], run.folds, run.seed)
    rows, all_records = [], []
    for fold in range(plan.k):
        held = set(plan.fold(fold))
        train_set = [s for s in samples if s.image_id not in held]
        test_set = [s for s in samples if s.image_id in held]
        _, records = _train_and_eval(run, train_set, test_set, f"fold {fold}")
        rows.append((fold, len(test_set), mae(records), rmse(records)))
        all_records.extend(records)
    mean_mae = sum(r[2] for r in rows) / len(rows)
    mean_rmse = sum(r[3] for r in rows) / len(rows)
    rows.append(("mean", len(samples), mean_mae, mean_rmse))
    out = _out_dir(run)
    _comparison(rows, out, "crossval", ("fold", "n", "MAE", "RMSE"))
    (out / "metrics.csv").write_text(records_csv(all_records))
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seeds)
    if args.corrupt:
        with ag.corrupt_gradient(args.corrupt):
            report = gradcheck.run_suite(seeds, model=not args.skip_model, model_size=args.size)
    else:
        report = gradcheck.run_suite(seeds, model=not args.skip_model, model_size=args.size)
    print("\n".join(report.lines()))
    print(f"{'PASS' if report.passed else 'FAIL'}: {len(report.errors)} checks, tolerance {report.tolerance:g}")
    return 0 if report.passed else 1


def cmd_make_fixture(args) -> int:
    manifest = write_fixture(args.out, args.images, args.size, args.dots, args.seed)
    print(manifest)
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a manifest")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MAE/RMSE of a checkpoint over a manifest")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="density map and count for one image")
    _add_run_flags(p)
    p.add_argument("image", help="PPM/PGM image")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep-context", help="train and evaluate one model per context half-width m")
    _add_run_flags(p)
    p.add_argument("--m-list", default="0,1,2,3,5", help="comma-separated m values")
    p.set_defaults(func=cmd_sweep_context)

    p = sub.add_parser("ablate", help="train and evaluate each architecture variant")
    _add_run_flags(p)
    p.add_argument("--variants", default="local,nonlocal,mha,full")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("crossval", help="k-fold cross-validation over a manifest")
    _add_run_flags(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and a small CTN")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--size", type=int, default=32, help="CTN input size for the end-to-end check")
    p.add_argument("--skip-model", action="store_true")
    p.add_argument("--corrupt", metavar="OP", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-fixture", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=2)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--dots", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ContractViolation, FileNotFoundError, OSError) as exc:
        print(f"ctn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
