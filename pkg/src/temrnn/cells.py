"""Convolutional LSTM cells with optional temporal gating.

Three cell kinds share one step implementation:

``lstm``
    canonical convolutional LSTM with peephole (Hadamard) connections.
``dlstm``
    input gate scaled by ``D(d_t)`` and forget gate by ``D(d_{t-1})`` where
    ``D(d) = a * exp(-c * d)`` and ``d_t`` is the time remaining until the
    last scan of the sequence.
``tlstm``
    a learnable per-channel ``w_delta * delta_t`` added to the input- and
    forget-gate pre-activations, ``delta_t`` being the gap since the previous
    scan.

Cells run on 2-D maps (``[N, C, H, W]``) or 1-D signals (``[N, C, L]``); the
spatial rank is fixed by the peephole tensors in the parameter dict. A single
example without the batch axis is also accepted.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .tensor import DTYPE, DimensionError, backward, conv2d, sigmoid, softplus

CELL_KINDS = ("lstm", "dlstm", "tlstm")
GATES = ("i", "f", "c", "o")
_TINY = np.finfo(DTYPE).tiny


def positive(raw):
    """Strictly positive smooth map used for the TEM amplitude and decay rate."""
    return np.maximum(softplus(raw), _TINY)


def positive_inverse(value: float) -> float:
    return float(np.log(np.expm1(value)))


@dataclass
class TemParams:
    a_raw: float
    c_raw: float

    @classmethod
    def from_effective(cls, a: float = 1.0, c: float = 0.01) -> "TemParams":
        return cls(positive_inverse(a), positive_inverse(c))

    @property
    def a(self) -> float:
        return float(positive(self.a_raw))

    @property
    def c(self) -> float:
        return float(positive(self.c_raw))


def tem_eval(tem: TemParams, d):
    """Return ``(D, dD/da_raw, dD/dc_raw)`` for ``D(d) = a * exp(-c * d)``.

    ``d`` may be a scalar or an array of non-negative distances.
    """
    d = np.asarray(d, dtype=DTYPE)
    if np.any(d < 0):
        raise ValueError("TEM distance must be non-negative")
    a, c = positive(tem.a_raw), positive(tem.c_raw)
    decay = np.exp(-c * d)
    value = a * decay
    d_a_raw = decay * sigmoid(tem.a_raw)
    d_c_raw = -d * value * sigmoid(tem.c_raw)
    return value, d_a_raw, d_c_raw


@dataclass
class StepState:
    """Recurrent pair ``(H, C)`` plus whatever the backward pass needs."""

    H: np.ndarray
    C: np.ndarray
    cache: dict[str, Any] = field(default_factory=dict, repr=False)


@dataclass
class SequenceSample:
    """One subject: ordered scans, their distance to the last scan, and a binary label."""

    inputs: list
    distances: list
    label: int = 0

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=DTYPE)
        if len(self.inputs) != len(d):
            raise DimensionError(f"{len(self.inputs)} inputs but {len(d)} distances")
        if len(d) == 0:
            raise ValueError("a sequence needs at least one step")
        if d[-1] != 0 or np.any(np.diff(d) > 0) or np.any(d < 0):
            raise ValueError(f"distances must be non-negative, non-increasing and end at 0: {d}")

    def stacked(self):
        """Inputs as ``[1, T, ...]`` and distances as ``[1, T]``."""
        return np.stack([np.asarray(x, dtype=DTYPE) for x in self.inputs])[None], \
            np.asarray(self.distances, dtype=DTYPE)[None]


def intervals_from_distances(distances):
    """Local gaps ``delta_t = d_{t-1} - d_t`` with ``delta_1 = 0``; works on ``[..., T]``."""
    d = np.asarray(distances, dtype=DTYPE)
    delta = np.zeros_like(d)
    delta[..., 1:] = d[..., :-1] - d[..., 1:]
    return delta


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_cell_params(kind: str, in_channels: int, hidden: int, kernel: int,
                     spatial: tuple[int, ...], rng: np.random.Generator,
                     a: float = 1.0, c: float = 0.01, forget_bias: float = 0.0) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) kernels and biases, zero peepholes.

    ``forget_bias`` is added to the forget-gate bias draw.

    ``spatial`` is ``(H, W)`` for image cells or ``(L,)`` for 1-D cells.
    """
    if kind not in CELL_KINDS:
        raise ValueError(f"unknown cell kind {kind!r}")
    ksize = (kernel,) * len(spatial)
    params = {}
    for g in GATES:
        for src, ch in (("x", in_channels), ("h", hidden)):
            bound = 1.0 / np.sqrt(ch * kernel ** len(spatial))
            params[f"W_{src}{g}"] = rng.uniform(-bound, bound, (hidden, ch, *ksize))
    for g in ("i", "f", "o"):
        params[f"W_c{g}"] = np.zeros((hidden, *spatial))
    bound = 1.0 / np.sqrt((in_channels + hidden) * kernel ** len(spatial))
    for g in GATES:
        params[f"b_{g}"] = rng.uniform(-bound, bound, hidden)
    params["b_f"] += forget_bias
    if kind == "dlstm":
        params["a_raw"] = np.array(positive_inverse(a))
        params["c_raw"] = np.array(positive_inverse(c))
    if kind == "tlstm":
        params["w_delta"] = np.zeros(hidden)
    return params


def _geometry(params):
    peep = params["W_ci"]
    return peep.shape[0], peep.ndim - 1  # hidden, spatial rank


def _as_2d_kernel(k):
    return k[:, :, None, :] if k.ndim == 3 else k


def _fused_kernel(params):
    w = np.concatenate([np.concatenate([_as_2d_kernel(params[f"W_x{g}"]), _as_2d_kernel(params[f"W_h{g}"])], axis=1)
                        for g in GATES], axis=0)
    b = np.concatenate([params[f"b_{g}"] for g in GATES])
    return w, b


def _peep(params, g):
    p = params[f"W_c{g}"]
    return p[:, None, :] if p.ndim == 2 else p


def zero_state(params, n: int, spatial: tuple[int, ...]) -> StepState:
    hidden, _ = _geometry(params)
    shape = (n, hidden, *spatial)
    return StepState(np.zeros(shape), np.zeros(shape))


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------

def _lift(x, rank):
    """Bring ``x`` to ``[N, C, H, W]``; returns the lifted array and how to undo it."""
    x = np.asarray(x, dtype=DTYPE)
    single = x.ndim == rank + 1
    if single:
        x = x[None]
    if x.ndim != rank + 2:
        raise DimensionError(f"cell input has rank {x.ndim}, expected {rank + 1} or {rank + 2}")
    if rank == 1:
        x = x[:, :, None, :]
    return x, single


def _lower(y, rank, single):
    if rank == 1:
        y = y[:, :, 0, :]
    return y[0] if single else y


def _per_sample(v, n):
    v = np.asarray(v, dtype=DTYPE)
    return np.broadcast_to(v, (n,)).astype(DTYPE)


def cell_step(kind: str, params, x, prev: StepState | None = None, *,
              d_t=None, d_prev=None, delta=None, fused=None) -> StepState:
    """Advance one time step. ``d_t``/``d_prev`` are used by dlstm, ``delta`` by tlstm."""
    if kind not in CELL_KINDS:
        raise ValueError(f"unknown cell kind {kind!r}")
    hidden, rank = _geometry(params)
    x4, single = _lift(x, rank)
    n = x4.shape[0]
    spatial = _peep(params, "i").shape[1:]
    if x4.shape[2:] != spatial:
        raise DimensionError(f"input spatial axes {x4.shape[2:]} do not match cell state {spatial}")
    if prev is None:
        h_prev = c_prev = np.zeros((n, hidden, *spatial))
    else:
        h_prev, _ = _lift(prev.H, rank)
        c_prev, _ = _lift(prev.C, rank)
        if h_prev.shape[0] != n:
            h_prev = np.broadcast_to(h_prev, (n, *h_prev.shape[1:]))
            c_prev = np.broadcast_to(c_prev, (n, *c_prev.shape[1:]))
    w, b = fused if fused is not None else _fused_kernel(params)
    if w.shape[1] != x4.shape[1] + hidden:
        raise DimensionError(f"input has {x4.shape[1]} channels, kernel expects {w.shape[1] - hidden}")

    z, conv_rec = conv2d(np.concatenate([x4, h_prev], axis=1), w, b, padding="same")
    zi, zf, zc, zo = np.split(z, 4, axis=1)
    zi = zi + _peep(params, "i") * c_prev
    zf = zf + _peep(params, "f") * c_prev
    cache = {"conv": conv_rec, "c_prev": c_prev, "rank": rank, "single": single, "kind": kind}
    if kind == "tlstm":
        delta = _per_sample(0.0 if delta is None else delta, n)
        shift = params["w_delta"][None, :, None, None] * delta[:, None, None, None]
        zi, zf = zi + shift, zf + shift
        cache["delta"] = delta
    si, sf, g = sigmoid(zi), sigmoid(zf), np.tanh(zc)
    if kind == "dlstm":
        if d_t is None:
            raise ValueError("dlstm step needs d_t")
        d_t = _per_sample(d_t, n)
        d_prev = d_t if d_prev is None else _per_sample(d_prev, n)
        tem = TemParams(params["a_raw"], params["c_raw"])
        di, dai, dci = tem_eval(tem, d_t)
        df, daf, dcf = tem_eval(tem, d_prev)
        cache.update(Di=di, Df=df, dDi=(dai, dci), dDf=(daf, dcf))
        ig, fg = di[:, None, None, None] * si, df[:, None, None, None] * sf
    else:
        ig, fg = si, sf
    c = fg * c_prev + ig * g
    o = sigmoid(zo + _peep(params, "o") * c)
    tc = np.tanh(c)
    h = o * tc
    cache.update(si=si, sf=sf, g=g, i=ig, f=fg, o=o, tc=tc, c=c)
    return StepState(_lower(h, rank, single), _lower(c, rank, single), cache)


def lstm_step(params, x_t, prev: StepState | None = None) -> StepState:
    return cell_step("lstm", params, x_t, prev)


def dlstm_step(params, x_t, d_t, d_prev, prev: StepState | None = None) -> StepState:
    return cell_step("dlstm", params, x_t, prev, d_t=d_t, d_prev=d_prev)


def tlstm_step(params, x_t, delta_t, prev: StepState | None = None) -> StepState:
    return cell_step("tlstm", params, x_t, prev, delta=delta_t)


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

def unroll(kind: str, params, xs, distances=None) -> list[StepState]:
    """Run the cell over a sequence from a zero state.

    ``xs`` is ``[N, T, C, ...]`` (or a :class:`SequenceSample`), ``distances``
    is ``[N, T]``. Returns the state after every step.
    """
    if isinstance(xs, SequenceSample):
        xs, distances = xs.stacked()
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.ndim < 3 or xs.shape[1] == 0:
        raise ValueError("unroll needs a non-empty sequence shaped [N, T, C, ...]")
    n, steps = xs.shape[:2]
    if distances is None:
        if kind != "lstm":
            raise ValueError(f"{kind} needs distances")
        distances = np.zeros((n, steps))
    distances = np.asarray(distances, dtype=DTYPE)
    if distances.shape != (n, steps):
        raise DimensionError(f"distances shape {distances.shape} != (N, T) = {(n, steps)}")
    deltas = intervals_from_distances(distances)
    fused = _fused_kernel(params)
    states, prev = [], None
    for t in range(steps):
        prev = cell_step(kind, params, xs[:, t], prev,
                         d_t=distances[:, t], d_prev=distances[:, max(t - 1, 0)],
                         delta=deltas[:, t], fused=fused)
        states.append(prev)
    return states


def bptt_backward(params, states: list[StepState], d_h_last, d_h_steps=None):
    """Reverse-mode gradients through an unrolled sequence.

    ``d_h_last`` is dLoss/dH at the final step; ``d_h_steps`` optionally adds
    a per-step upstream. Returns ``(grads, d_inputs)`` where ``grads`` mirrors
    ``params`` and ``d_inputs`` is ``[N, T, C, ...]``.
    """
    if not states:
        raise ValueError("no states to backpropagate through")
    hidden, rank = _geometry(params)
    first = states[0].cache
    kind = first["kind"]
    if ("a_raw" in params) != (kind == "dlstm") or ("w_delta" in params) != (kind == "tlstm"):
        raise ValueError(f"parameter set does not belong to a {kind} cell")
    w, _ = _fused_kernel(params)
    in_ch = w.shape[1] - hidden
    peep = {g: _peep(params, g) for g in ("i", "f", "o")}

    dw = np.zeros_like(w)
    db = np.zeros(4 * hidden)
    dpeep = {g: np.zeros_like(p) for g, p in peep.items()}
    d_a = d_c = 0.0
    d_wdelta = np.zeros(hidden)
    dxs = []

    dh, _ = _lift(d_h_last, rank)
    dh = dh.copy()
    dc = np.zeros_like(dh)
    for t in range(len(states) - 1, -1, -1):
        k = states[t].cache
        if d_h_steps is not None and d_h_steps[t] is not None:
            dh = dh + _lift(d_h_steps[t], rank)[0]
        o, tc, c, c_prev = k["o"], k["tc"], k["c"], k["c_prev"]
        dzo = dh * tc * o * (1.0 - o)
        dc = dc + dh * o * (1.0 - tc * tc) + dzo * peep["o"]
        dpeep["o"] += (dzo * c).sum(axis=0)
        d_ig = dc * k["g"]
        d_fg = dc * c_prev
        dzc = dc * k["i"] * (1.0 - k["g"] ** 2)
        si, sf = k["si"], k["sf"]
        if kind == "dlstm":
            di, df = k["Di"][:, None, None, None], k["Df"][:, None, None, None]
            g_di = (d_ig * si).sum(axis=(1, 2, 3))
            g_df = (d_fg * sf).sum(axis=(1, 2, 3))
            d_a += np.dot(g_di, k["dDi"][0]) + np.dot(g_df, k["dDf"][0])
            d_c += np.dot(g_di, k["dDi"][1]) + np.dot(g_df, k["dDf"][1])
            d_si, d_sf = d_ig * di, d_fg * df
        else:
            d_si, d_sf = d_ig, d_fg
        dzi = d_si * si * (1.0 - si)
        dzf = d_sf * sf * (1.0 - sf)
        if kind == "tlstm":
            d_wdelta += ((dzi + dzf) * k["delta"][:, None, None, None]).sum(axis=(0, 2, 3))
        dpeep["i"] += (dzi * c_prev).sum(axis=0)
        dpeep["f"] += (dzf * c_prev).sum(axis=0)
        dc_prev = dc * k["f"] + dzi * peep["i"] + dzf * peep["f"]
        dz = np.concatenate([dzi, dzf, dzc, dzo], axis=1)
        dxh, dwt, dbt = backward(k["conv"], dz)
        dw += dwt
        db += dbt
        dxs.append(_lower(dxh[:, :in_ch], rank, False))
        dh = dxh[:, in_ch:]
        dc = dc_prev

    grads = {}
    wsplit = np.split(dw, 4, axis=0)
    for gi, g in enumerate(GATES):
        wx, wh = wsplit[gi][:, :in_ch], wsplit[gi][:, in_ch:]
        grads[f"W_x{g}"] = wx.reshape(params[f"W_x{g}"].shape)
        grads[f"W_h{g}"] = wh.reshape(params[f"W_h{g}"].shape)
        grads[f"b_{g}"] = db[gi * hidden:(gi + 1) * hidden]
    for g in ("i", "f", "o"):
        grads[f"W_c{g}"] = dpeep[g].reshape(params[f"W_c{g}"].shape)
    if kind == "dlstm":
        grads["a_raw"] = np.array(d_a)
        grads["c_raw"] = np.array(d_c)
    if kind == "tlstm":
        grads["w_delta"] = d_wdelta
    d_inputs = np.stack(dxs[::-1], axis=1)
    if first["single"]:
        d_inputs = d_inputs[0]
    return grads, d_inputs
