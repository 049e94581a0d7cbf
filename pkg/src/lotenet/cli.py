"""Command-line interface: ``lotenet {train,eval,sweep,gradcheck,shapes,synth}``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import AugmentConfig, Dataset, load_dataset, save_ltt_dataset, split, synth_generate
from .errors import ConfigError, DataError, LoTeNetError, MetricError, ShapeError, UsageError
from .model import forward_batch, init_model, shape_plan
from .tensor_core import broken_adjoint, count_macs, dtype_for
from .training import EpochRecord, FitResult, evaluate, fit, grad_check

log = logging.getLogger("lotenet")

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2
EXIT_DATA = 3

METRICS_HEADER = "epoch,train_loss,train_auc,val_loss,val_auc,seconds\n"


def _fmt(x: float) -> str:
    return "nan" if x != x else f"{x:.6f}"


def metrics_row(rec: EpochRecord, with_time: bool) -> str:
    seconds = _fmt(rec.seconds) if with_time else ""
    return (f"{rec.epoch},{_fmt(rec.train_loss)},{_fmt(rec.train_auc)},"
            f"{_fmt(rec.val_loss)},{_fmt(rec.val_auc)},{seconds}\n")


# --------------------------------------------------------------------------
# shared steps


def load_run_data(run: RunConfig) -> Dataset:
    if run.data:
        return load_dataset(run.data)
    return synth_generate(run.synth_count, run.synth_size, run.synth_seed)


def resolve_shape(run: RunConfig, ds: Dataset) -> RunConfig:
    """Pin ``input`` to the dataset's image shape, rejecting a conflicting value."""
    shape = tuple(int(s) for s in ds.image_shape)
    if run.input != "auto" and run.input_shape() != shape:
        raise ConfigError(f"input {run.input} does not match dataset images {'x'.join(map(str, shape))}")
    if int(ds.labels.max()) >= run.classes:
        raise ConfigError(f"dataset has label {int(ds.labels.max())} but classes={run.classes}")
    return run.replace(input="x".join(str(s) for s in shape))


def split_run_data(run: RunConfig, ds: Dataset) -> list[Dataset]:
    parts = split(ds, run.split_fractions(), run.split_seed)
    for name, part in zip(("train", "validation", "test"), parts):
        if len(np.unique(part.labels)) < 2:
            raise DataError(f"{name} split holds a single class")
    return parts


def train_run(run: RunConfig, parts: list[Dataset], out: Path, echo=print) -> FitResult:
    """Train one configuration and write checkpoints and metrics into ``out``."""
    cfg = run.model_config()
    tcfg = run.train_config()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(run.to_text(), encoding="utf-8")
    model = init_model(cfg, seed=run.seed, dtype=dtype_for(run.precision), noise=run.init_noise)
    augment = AugmentConfig() if run.augment else None
    train, val = parts[0], parts[1]

    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as mfh, \
            open(out / "timing.csv", "w", encoding="utf-8", newline="") as tfh:
        mfh.write(METRICS_HEADER)
        tfh.write("epoch,seconds\n")

        def on_epoch(rec: EpochRecord) -> None:
            mfh.write(metrics_row(rec, run.record_time))
            mfh.flush()
            tfh.write(f"{rec.epoch},{rec.seconds:.6f}\n")
            tfh.flush()
            echo(f"epoch {rec.epoch}: train_loss={_fmt(rec.train_loss)} train_auc={_fmt(rec.train_auc)} "
                 f"val_loss={_fmt(rec.val_loss)} val_auc={_fmt(rec.val_auc)}")

        result = fit(model, train, val, tcfg, augment=augment, on_epoch=on_epoch)

    last = result.records[-1].epoch
    save_checkpoint(out / "best.ltnc", run, result.best_model,
                    {"epoch": result.best_epoch, "val_auc": result.best_val_auc, "role": "best"})
    save_checkpoint(out / "final.ltnc", run, result.final_model,
                    {"epoch": last, "val_auc": result.records[-1].val_auc, "role": "final"})
    echo(f"best epoch {result.best_epoch} val_auc={_fmt(result.best_val_auc)}")
    if len(parts) > 2:
        test = evaluate(result.best_model, parts[2], run.eval_batch)
        echo(f"test auc={_fmt(test.auc)} accuracy={_fmt(test.accuracy)}")
    return result


# --------------------------------------------------------------------------
# subcommands


def cmd_shapes(run: RunConfig, args) -> int:
    plan = shape_plan(run.model_config())
    print(plan.describe())
    return EXIT_OK


def cmd_train(run: RunConfig, args) -> int:
    run.model_config()
    ds = load_run_data(run)
    run = resolve_shape(run, ds)
    print(shape_plan(run.model_config()).describe())
    parts = split_run_data(run, ds)
    train_run(run, parts, Path(run.out))
    return EXIT_OK


def cmd_sweep(run: RunConfig, args) -> int:
    betas = run.beta_list()
    for b in betas:
        run.replace(beta=b).model_config()
    ds = load_run_data(run)
    run = resolve_shape(run, ds)
    parts = split_run_data(run, ds)
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, timing = [], []
    sample = parts[0].images[:1].astype(dtype_for(run.precision))
    for b in betas:
        sub = run.replace(beta=b)
        print(f"beta={b}")
        print(shape_plan(sub.model_config()).describe())
        start = time.perf_counter()
        result = train_run(sub, parts, out / f"beta_{b}")
        seconds = time.perf_counter() - start
        with count_macs() as macs:
            forward_batch(result.best_model, sample)
        rows.append(f"{b},{_fmt(result.best_val_auc)}\n")
        timing.append(f"{b},{seconds:.6f},{len(result.records)},{macs.total}\n")
    (out / "sweep.csv").write_text("beta,best_val_auc\n" + "".join(rows), encoding="utf-8")
    (out / "sweep_timing.csv").write_text("beta,seconds,epochs,macs_per_sample\n" + "".join(timing),
                                          encoding="utf-8")
    print((out / "sweep.csv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_eval(run: RunConfig, args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    expected = ckpt.model.config.input_shape
    if tuple(ds.image_shape) != expected:
        raise ShapeError(
            f"dataset images are {'x'.join(map(str, ds.image_shape))}, "
            f"checkpoint expects {'x'.join(map(str, expected))}"
        )
    batch = args.eval_batch if getattr(args, "eval_batch", None) else ckpt.run.eval_batch
    ev = evaluate(ckpt.model, ds, batch)
    print(f"auc={ev.auc:.6f} accuracy={ev.accuracy:.6f}")
    return EXIT_OK


def cmd_gradcheck(run: RunConfig, args) -> int:
    if run.precision != "wide":
        raise ConfigError("gradcheck needs precision = wide")
    cfg = run.model_config()
    model = init_model(cfg, seed=run.seed, dtype=dtype_for("wide"), noise=run.init_noise)
    h, w, c = cfg.input_shape
    if (h, w, c) == (run.synth_size, run.synth_size, 1):
        sample = synth_generate(2, run.synth_size, run.synth_seed)
        images, labels = sample.images[:1], sample.labels[:1]
    else:
        rng = np.random.default_rng(run.seed)
        images, labels = rng.uniform(size=(1, h, w, c)), np.array([0])
    print(f"gradcheck: {model.param_count} parameters, input {h}x{w}x{c}, beta={cfg.bond_dim}")
    broken = getattr(args, "break_adjoint", None)
    guard = broken_adjoint(broken) if broken else contextlib.nullcontext()
    with guard:
        report = grad_check(model, images, labels, tolerance=run.tolerance)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_synth(run: RunConfig, args) -> int:
    ds = synth_generate(run.synth_count, run.synth_size, run.synth_seed)
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    save_ltt_dataset(ds, out / "images.ltt", out / "labels.ltt")
    print(f"wrote {len(ds)} samples of {run.synth_size}x{run.synth_size} to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="initialisation and shuffling seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--beta", type=int, help="bond dimension")
    p.add_argument("--layers", type=int, help="number of squeeze/MPS layers")
    p.add_argument("--kernel", type=int, help="squeeze kernel stride k")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--batch", type=int, help="mini-batch size")
    p.add_argument("--patience", type=int, help="early-stopping patience in epochs")
    p.add_argument("--precision", choices=["wide", "narrow"])
    p.add_argument("--input", metavar="HxWxC", help="input image shape (default: from data)")
    p.add_argument("--classes", type=int)
    p.add_argument("--data", metavar="DIR", help="dataset directory (default: synthetic task)")
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--split", metavar="F,F[,F]", help="train,val[,test] fractions")
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--synth-count", dest="synth_count", type=int)
    p.add_argument("--synth-size", dest="synth_size", type=int)
    p.add_argument("--synth-seed", dest="synth_seed", type=int)
    p.add_argument("--augment", action="store_true", help="random flips and quarter turns")
    p.add_argument("--record-time", dest="record_time", action="store_true",
                   help="fill the seconds column of metrics.csv (breaks byte-identical reruns)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="lotenet", description="Hierarchical tensor-network (LoTeNet) image classifier.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train a model and write checkpoints and metrics.csv")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset", help="directory with images.ltt/labels.ltt or labels.csv")
    p.add_argument("--eval-batch", dest="eval_batch", type=int)

    p = sub.add_parser("sweep", parents=[common], help="train once per bond dimension")
    p.add_argument("--betas", metavar="B,B,...", help="comma-separated bond dimensions")

    p = sub.add_parser("gradcheck", parents=[common], help="compare gradients with finite differences")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--break-adjoint", dest="break_adjoint", metavar="KIND", help=argparse.SUPPRESS)

    sub.add_parser("shapes", parents=[common], help="print the per-layer shape plan")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic LTT dataset")
    p.add_argument("--count", dest="synth_count", type=int)
    p.add_argument("--size", dest="synth_size", type=int)
    return parser


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "shapes": cmd_shapes,
    "synth": cmd_synth,
}

_NOT_CONFIG = {"command", "config", "verbose", "checkpoint", "dataset", "break_adjoint", "eval_batch"}


def _thread_limit():
    value = os.environ.get("LOTENET_THREADS", "").strip()
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"LOTENET_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"LOTENET_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    base = RunConfig(input="16x16x1", layers=2, beta=3, precision="wide") if args.command == "gradcheck" else None
    try:
        run = load_config(getattr(args, "config", None), overrides, base)
        with _thread_limit():
            return COMMANDS[args.command](run, args)
    except (DataError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ShapeError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LoTeNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
