"""The two-regime synthetic comparison: MC-CNN vs LSTM vs DLSTM on growing discs."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from .metrics import MetricsReport, roc_points, write_metrics_csv, write_roc_tsv
from .models import ModelConfig, SequenceClassifier, fit_input_scaling
from .synth import REGIMES, GeneratorSpec, generate_dataset, read_dataset
from .train import TrainConfig, predict_proba, save_checkpoint, train

log = logging.getLogger(__name__)

SCALES = {
    "small": {"n_train": 1000, "n_test": 400, "epochs": 30, "milestones": (15, 22, 26), "image_size": 16},
    "paper": {"n_train": 5000, "n_test": 1000, "epochs": 100, "milestones": (50, 70, 80), "image_size": 32},
}
FIG2_MODELS = ("mccnn", "lstm", "dlstm")
HIDDEN = 8
FORGET_BIAS = 1.0


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("TEMRNN_THREADS", "1")))
    except ValueError:
        return 1


def model_config(cell: str, image_size: int, steps: int = 5) -> ModelConfig:
    return ModelConfig(task="image", cell=cell, spatial=(image_size, image_size), steps=steps,
                       hidden=HIDDEN, kernel=3, forget_bias=FORGET_BIAS)


def _train_one(job):
    regime_dir, cell, scale, seed, flags = job
    regime_dir = Path(regime_dir)
    sc = SCALES[scale]
    tr, te = read_dataset(regime_dir / "train.dlsq"), read_dataset(regime_dir / "test.dlsq")
    cfg = fit_input_scaling(model_config(cell, sc["image_size"], tr.inputs.shape[1]), tr.inputs)
    model = SequenceClassifier(cfg, seed=seed)
    tcfg = TrainConfig(epochs=sc["epochs"], milestones=sc["milestones"], seed=seed)
    header = {**flags, "cell": cell, **{f"train.{k}": v for k, v in asdict(tcfg).items()}}
    state = train(tcfg, tr, model, log_path=regime_dir / f"{cell}.log.csv", header=header)
    save_checkpoint(regime_dir / f"{cell}.ckpt", state, extra=flags)
    scores = predict_proba(model, te)
    write_roc_tsv(regime_dir.parent / f"roc_{regime_dir.name}_{cell}.tsv", roc_points(scores, te.labels),
                  header={**flags, "regime": regime_dir.name, "cell": cell})
    report = MetricsReport.from_scores(scores, te.labels)
    log.info("%s/%s auc=%.4f", regime_dir.name, cell, report.auc)
    return regime_dir.name, cell, report


def reproduce_fig2(out_dir, seed: int = 7, scale: str = "small", workers: int | None = None) -> dict:
    """Generate both regimes, train the three models on each, write ROC and AUC tables.

    Returns ``{regime: {model: MetricsReport}}``.
    """
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {tuple(SCALES)}")
    sc = SCALES[scale]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    flags = {"command": "reproduce-fig2", "seed": seed, "scale": scale}
    jobs = []
    for regime in REGIMES:
        rdir = out / regime
        rdir.mkdir(exist_ok=True)
        spec = GeneratorSpec.for_image_size(sc["image_size"], regime=regime, seed=seed)
        generate_dataset(spec, sc["n_train"], rdir / "train.dlsq", extra={"flags": flags, "split": "train"})
        generate_dataset(spec, sc["n_test"], rdir / "test.dlsq", offset=sc["n_train"],
                         extra={"flags": flags, "split": "test"})
        jobs += [(str(rdir), cell, scale, seed, flags) for cell in FIG2_MODELS]

    workers = workers or worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]

    table = {r: {} for r in REGIMES}
    for regime, cell, report in results:
        table[regime][cell] = report
    with open(out / "fig2_auc.csv", "w", newline="") as fh:
        for k, v in flags.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["regime"] + list(FIG2_MODELS))
        for regime in REGIMES:
            w.writerow([regime] + [f"{table[regime][m].auc:.4f}" for m in FIG2_MODELS])
    for regime in REGIMES:
        write_metrics_csv(out / f"metrics_{regime}.csv", table[regime], header=flags)
    summary = {regime: {m: rep.values() for m, rep in table[regime].items()} for regime in REGIMES}
    (out / "fig2_summary.json").write_text(json.dumps({"flags": flags, "results": summary}, indent=2,
                                                      sort_keys=True) + "\n")
    return table


def format_table(table) -> str:
    lines = [f"{'regime':<15}" + "".join(f"{m:>9}" for m in FIG2_MODELS)]
    for regime, row in table.items():
        lines.append(f"{regime:<15}" + "".join(f"{row[m].auc:>9.4f}" for m in FIG2_MODELS))
    return "\n".join(lines)

