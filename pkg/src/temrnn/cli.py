"""Command-line entry point: ``temrnn {gen-data,train,eval,gradcheck,reproduce-fig2}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .experiments import SCALES, format_table, reproduce_fig2
from .metrics import MetricUndefinedError, MetricsReport, ensemble_scores, roc_points, write_metrics_csv, \
    write_roc_tsv
from .models import MODEL_KINDS, ModelConfig, SequenceClassifier, fit_input_scaling
from .synth import REGIMES, Dataset, GeneratorSpec, generate_dataset, generate_feature_samples, ingest_cifar10, \
    read_dataset, write_dataset
from .train import TrainConfig, load_checkpoint, predict_proba, save_checkpoint, train

log = logging.getLogger("temrnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _data_file(path: str, split: str) -> Path:
    p = Path(path)
    return p / f"{split}.dlsq" if p.is_dir() else p


# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    size = 32 if args.image_size is None else args.image_size
    spec = GeneratorSpec.for_image_size(size, regime=args.regime, time_points=args.time_points, seed=args.seed,
                                        channels=args.channels)
    if args.task == "feature":
        for split, n, offset in (("train", args.n_train, 0), ("test", args.n_test, args.n_train)):
            if n:
                samples = generate_feature_samples(spec, n, offset=offset)
                data = Dataset.from_samples(samples)
                data.inputs = data.inputs[:, :, :, None, :]
                write_dataset(out / f"{split}.dlsq", data)
                meta = {"task": "feature", "spec": spec.__dict__, "flags": flags, "n_samples": n,
                        "counts": np.bincount(data.labels, minlength=2).tolist()}
                (out / f"{split}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return 0
    backgrounds = ingest_cifar10(args.cifar10) if args.cifar10 else None
    generate_dataset(spec, args.n_train, out / "train.dlsq", backgrounds=backgrounds,
                     extra={"flags": flags, "split": "train"})
    if args.n_test:
        generate_dataset(spec, args.n_test, out / "test.dlsq", backgrounds=backgrounds, offset=args.n_train,
                         extra={"flags": flags, "split": "test"})
    return 0


def _load_for_task(path: Path, task: str) -> Dataset:
    data = read_dataset(path)
    if task == "feature":
        if data.inputs.shape[3] != 1:
            raise UsageError(f"{path} does not hold feature sequences (height {data.inputs.shape[3]})")
        data.inputs = data.inputs[:, :, :, 0, :]
    return data


def cmd_train(args) -> int:
    tr = _load_for_task(_data_file(args.data, "train"), args.task)
    val_path = Path(args.val) if args.val else None
    val = _load_for_task(val_path, args.task) if val_path else None
    steps = tr.inputs.shape[1]
    if args.task == "image":
        cfg = ModelConfig(task="image", cell=args.cell, in_channels=tr.inputs.shape[2],
                          spatial=tr.inputs.shape[3:], steps=steps, hidden=args.hidden or 8,
                          kernel=args.kernel or 3, forget_bias=args.forget_bias)
    else:
        cfg = ModelConfig.feature(args.cell, steps=steps, hidden=args.hidden or 8, kernel=args.kernel or 5,
                                  forget_bias=args.forget_bias)
    fit_input_scaling(cfg, tr.inputs)
    milestones = args.milestones
    if milestones is None:
        scaled = (int(round(args.epochs * f)) for f in (0.5, 0.7, 0.8))
        milestones = tuple(sorted({m for m in scaled if 0 < m < args.epochs}))
    try:
        tcfg = TrainConfig(epochs=args.epochs, lr=args.lr, decay=args.decay, milestones=milestones,
                           batch_size=args.batch_size, momentum=args.momentum, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    model = SequenceClassifier(cfg, seed=args.seed)
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    header = {**flags, "epochs": tcfg.epochs, "lr": tcfg.lr, "decay": tcfg.decay,
              "milestones": ",".join(map(str, tcfg.milestones)), "momentum": tcfg.momentum,
              "batch_size": tcfg.batch_size, "hidden": cfg.hidden, "kernel": cfg.kernel}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    state = train(tcfg, tr, model, val=val, log_path=log_path, header=header)
    save_checkpoint(out, state, extra={"flags": flags})
    return 0


def cmd_eval(args) -> int:
    states = [load_checkpoint(p) for p in args.ckpt]
    task = states[0].model.config.task
    data = _load_for_task(_data_file(args.data, "test"), task)
    scores = ensemble_scores([predict_proba(s.model, data) for s in states])
    try:
        pts = roc_points(scores, data.labels)
        report = MetricsReport.from_scores(scores, data.labels)
    except MetricUndefinedError as exc:
        print(f"error: {exc} (test set labels: {sorted(set(data.labels.tolist()))})", file=sys.stderr)
        return 2
    flags = {"command": "eval", "ckpt": ",".join(args.ckpt), "data": args.data}
    if args.roc_out:
        write_roc_tsv(args.roc_out, pts, header=flags)
    name = "+".join(s.model.config.cell for s in states[:1]) + (f"x{len(states)}" if len(states) > 1 else "")
    metrics_out = args.metrics_out or (Path(args.roc_out).with_suffix(".metrics.csv") if args.roc_out else None)
    if metrics_out:
        write_metrics_csv(metrics_out, {name: report}, header=flags)
    vals = report.values()
    print(" ".join(f"{k}={vals[k]:.4f}" for k in vals))
    return 0


def cmd_gradcheck(args) -> int:
    cells = MODEL_KINDS if args.cell == "all" else (args.cell,)
    tasks = ("image", "feature") if args.task == "all" else (args.task,)
    ok = True
    for task in tasks:
        for cell in cells:
            for steps in args.steps:
                model, xs, d = gc.toy_problem(cell, task, steps=steps, seed=args.seed)
                report = gc.check_model(model, xs, d, seed=args.seed, max_entries=args.max_entries)
                print(gc.format_report(f"{task}/{cell} steps={steps}", report))
                ok &= all(r.passed for r in report)
    print("ALL PASS" if ok else "FAILURES PRESENT")
    return 0 if ok else 2


def cmd_reproduce(args) -> int:
    table = reproduce_fig2(args.out, seed=args.seed, scale=args.scale)
    print(format_table(table))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="temrnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write synthetic train/test sequences")
    g.add_argument("--regime", choices=REGIMES, default="same-interval")
    g.add_argument("--task", choices=("image", "feature"), default="image")
    g.add_argument("--n-train", type=int, default=5000)
    g.add_argument("--n-test", type=int, default=1000)
    g.add_argument("--time-points", type=int, default=5)
    g.add_argument("--image-size", type=int, default=None)
    g.add_argument("--channels", type=int, choices=(1, 3), default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--cifar10", default=None, help="CIFAR-10 binary batch for backgrounds")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--cell", choices=MODEL_KINDS, required=True)
    t.add_argument("--task", choices=("image", "feature"), default="image")
    t.add_argument("--data", required=True, help="dataset directory or train file")
    t.add_argument("--val", default=None, help="optional validation dataset file")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--decay", type=float, default=0.4)
    t.add_argument("--milestones", type=_int_list, default=None)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--hidden", type=int, default=None)
    t.add_argument("--kernel", type=int, default=None)
    t.add_argument("--forget-bias", type=float, default=1.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", default=None, help="training log CSV (default: <out>.log.csv)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score checkpoints on a dataset (several checkpoints are averaged)")
    e.add_argument("--ckpt", action="append", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--roc-out", default=None)
    e.add_argument("--metrics-out", default=None)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    c.add_argument("--cell", choices=MODEL_KINDS + ("all",), default="all")
    c.add_argument("--task", choices=("image", "feature", "all"), default="all")
    c.add_argument("--steps", type=_int_list, default=(2, 3))
    c.add_argument("--max-entries", type=int, default=40)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("reproduce-fig2", help="both synthetic regimes, three models each")
    r.add_argument("--seed", type=int, default=7)
    r.add_argument("--scale", choices=tuple(SCALES), default="small")
    r.add_argument("--out", default="fig2_out")
    r.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
