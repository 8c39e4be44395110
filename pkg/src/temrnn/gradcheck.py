"""Central finite-difference checks of the hand-written backward passes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelConfig, SequenceClassifier

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class ParamCheck:
    name: str
    rel_error: float
    entries: int
    passed: bool


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def numeric_gradient(fn, array: np.ndarray, indices, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``array`` entries at ``indices`` (perturbed in place)."""
    out = np.empty(len(indices))
    for k, idx in enumerate(indices):
        orig = array[idx]
        array[idx] = orig + step
        plus = fn()
        array[idx] = orig - step
        minus = fn()
        array[idx] = orig
        out[k] = (plus - minus) / (2 * step)
    return out


def _pick(shape, rng, limit):
    idx = list(np.ndindex(shape))
    if limit is None or len(idx) <= limit:
        return idx
    return [idx[i] for i in sorted(rng.choice(len(idx), limit, replace=False))]


def check_model(model: SequenceClassifier, xs, distances, seed: int = 0, training: bool = False,
                max_entries: int | None = 40, step: float = STEP, tol: float = TOLERANCE,
                backward=None) -> list[ParamCheck]:
    """Compare ``model.backward`` with finite differences of ``sum(w * logits)``.

    ``w`` is a fixed random weighting of the logits. With ``training`` the
    dropout masks are held fixed by reseeding before every forward pass.
    ``backward`` substitutes another backward implementation (negative controls).
    """
    rng = np.random.default_rng(seed)
    logits, _ = model.forward(xs, distances)
    weight = rng.normal(size=logits.shape)

    def run():
        return model.forward(xs, distances, training=training, rng=np.random.default_rng(seed + 1))

    def loss():
        return float(np.sum(run()[0] * weight))

    _, cache = run()
    grads = (backward or model.backward)(cache, weight)
    report = []
    for name in sorted(model.params):
        arr = model.params[name]
        if arr.ndim == 0:
            arr = model.params[name] = np.array(arr, dtype=float)
        indices = _pick(arr.shape, rng, max_entries)
        num = numeric_gradient(loss, arr, indices, step)
        ana = np.array([np.asarray(grads[name])[i] for i in indices])
        err = relative_error(ana, num)
        report.append(ParamCheck(name, err, len(indices), err < tol))
    return report


def randomize(model: SequenceClassifier, rng, scale: float = 0.5, c: float = 0.3) -> SequenceClassifier:
    """Perturb every parameter so gates, peepholes and TEM are all active."""
    for k, v in model.params.items():
        model.params[k] = np.asarray(v + scale * rng.normal(size=np.shape(v)), dtype=float)
    if "cell.c_raw" in model.params:
        model.params["cell.c_raw"] = np.array(np.log(np.expm1(c)))
    return model


def toy_problem(cell: str, task: str, steps: int = 2, seed: int = 0, batch: int = 2):
    """A small randomized model plus inputs for gradient checking."""
    rng = np.random.default_rng(seed)
    if task == "image":
        cfg = ModelConfig(task="image", cell=cell, spatial=(16, 16), steps=steps, hidden=2, kernel=3,
                          conv1_channels=3, conv2_channels=4, fc_hidden=6)
    else:
        cfg = ModelConfig.feature(cell, hidden=3, steps=steps)
    model = randomize(SequenceClassifier(cfg, seed=seed), rng)
    xs = rng.normal(size=(batch, steps, cfg.in_channels, *cfg.spatial))
    gaps = rng.uniform(0.5, 3.0, size=(batch, steps - 1))
    d = np.concatenate([np.cumsum(gaps[:, ::-1], axis=1)[:, ::-1], np.zeros((batch, 1))], axis=1)
    return model, xs, d


def format_report(title: str, report: list[ParamCheck]) -> str:
    lines = [f"== {title}"]
    for r in report:
        lines.append(f"  {'PASS' if r.passed else 'FAIL'}  {r.name:<18} rel_err={r.rel_error:.3e}  entries={r.entries}")
    return "\n".join(lines)
