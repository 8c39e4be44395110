"""Binary classification metrics: ROC/AUC, confusion-based scores, fold summaries."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

METRIC_NAMES = ("accuracy", "auc", "f1", "recall", "precision")


class MetricUndefinedError(ValueError):
    pass


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError(f"need matching non-empty scores and labels, got {scores.shape} and {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """``(threshold, fpr, tpr)`` for "score >= threshold" at every distinct score.

    The first point is ``(inf, 0, 0)``; tied scores move together.
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("ROC needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = (last_of_group + 1) - tp
    pts = [(float("inf"), 0.0, 0.0)]
    pts += [(float(s[i]), float(fp[k] / n_neg), float(tp[k] / n_pos)) for k, i in enumerate(last_of_group)]
    return pts


def auc(scores, labels) -> float:
    """Trapezoidal area under :func:`roc_points`."""
    pts = np.array([p[1:] for p in roc_points(scores, labels)])
    fpr, tpr = pts[:, 0], pts[:, 1]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def confusion_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """Accuracy, precision, recall and F1 with positive = score >= threshold.

    An empty denominator yields 0 and is named in ``undefined``.
    """
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    undefined = []
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if tp + fp == 0:
        undefined.append("precision")
    if tp + fn == 0:
        undefined.append("recall")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"accuracy": (tp + tn) / labels.size, "precision": precision, "recall": recall, "f1": f1,
            "tp": tp, "fp": fp, "fn": fn, "tn": tn, "undefined": undefined}


@dataclass
class MetricsReport:
    accuracy: float
    auc: float
    f1: float
    recall: float
    precision: float
    undefined: list = field(default_factory=list)

    @classmethod
    def from_scores(cls, scores, labels, threshold: float = 0.5) -> "MetricsReport":
        cm = confusion_metrics(scores, labels, threshold)
        return cls(cm["accuracy"], auc(scores, labels), cm["f1"], cm["recall"], cm["precision"], cm["undefined"])

    def values(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in METRIC_NAMES}


def aggregate_folds(reports) -> dict[str, tuple[float, float]]:
    """Per-metric ``(mean, population std)`` across fold reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("no fold reports to aggregate")
    out = {}
    for name in METRIC_NAMES:
        v = np.array([r.values()[name] if isinstance(r, MetricsReport) else r[name] for r in reports], dtype=float)
        out[name] = (float(v.mean()), float(v.std()))
    return out


def ensemble_scores(score_sets) -> np.ndarray:
    """Mean predicted probability across models (e.g. the five fold models)."""
    return np.mean(np.stack([np.asarray(s, dtype=float) for s in score_sets]), axis=0)


def write_roc_tsv(path, points, header: dict | None = None) -> None:
    with open(path, "w") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        fh.write("threshold\tfpr\ttpr\n")
        for thr, fpr, tpr in points:
            fh.write(f"{thr!r}\t{fpr!r}\t{tpr!r}\n")


def write_metrics_csv(path, rows: dict, header: dict | None = None) -> None:
    """One row per method, columns as in a results table: ``mean(std)`` in percent.

    ``rows`` maps a method name to either a :class:`MetricsReport` or the
    output of :func:`aggregate_folds`.
    """
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Method", "Accuracy", "AUC", "F1", "Recall", "Precision"])
        for method, rep in rows.items():
            agg = aggregate_folds([rep]) if isinstance(rep, MetricsReport) else rep
            w.writerow([method] + [f"{100 * agg[m][0]:.2f}({100 * agg[m][1]:.2f})" for m in METRIC_NAMES])
