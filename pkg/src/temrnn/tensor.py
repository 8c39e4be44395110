"""Dense float64 tensor operations with explicit backward rules.

Tensors are plain :class:`numpy.ndarray` objects of dtype float64. Every
forward op returns ``(out, record)``; :func:`backward` consumes the record and
an upstream gradient and returns one gradient per differentiable input.

Convolutions accept either a single example (``[C, H, W]`` / ``[C, L]``) or a
batch with a leading sample axis (``[N, C, H, W]`` / ``[N, C, L]``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(RuntimeError):
    """Raised when a backward rule is called without its forward cache."""


@dataclass
class Record:
    """What a forward op saved for its backward pass."""

    op: str
    saved: dict[str, Any] = field(default_factory=dict)


_BACKWARD: dict[str, Callable[[dict[str, Any], np.ndarray], tuple]] = {}


def _rule(name):
    def register(fn):
        _BACKWARD[name] = fn
        return fn

    return register


def backward(record: Record, grad: np.ndarray) -> tuple:
    """Gradients of the recorded op w.r.t. each of its inputs, in call order."""
    if record is None or record.op not in _BACKWARD:
        raise ContractError(f"no backward rule for record {record!r}")
    if not record.saved:
        raise ContractError(f"record for '{record.op}' carries no forward cache")
    return _BACKWARD[record.op](record.saved, np.asarray(grad, dtype=DTYPE))


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pad_amounts(k: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        return (k - 1) // 2, k // 2
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x, kernel, bias, padding: str = "valid"):
    """Cross-correlate ``x`` with ``kernel`` (no flip) and add a per-channel bias."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects input [N,]C,H,W and kernel O,C,kH,kW; got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"conv2d channel axis mismatch: input C={c}, kernel C_in={kc}")
    if bias.shape != (o,):
        raise DimensionError(f"conv2d bias axis mismatch: bias {bias.shape}, kernel C_out={o}")
    ph, pw = _pad_amounts(kh, padding), _pad_amounts(kw, padding)
    if h + sum(ph) < kh or w + sum(pw) < kw:
        raise DimensionError(f"conv2d kernel {kh}x{kw} larger than padded input {h}x{w} on axes H/W")
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw)) if padding == "same" else x
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # N,C,H',W',kh,kw
    out = np.tensordot(cols, kernel, axes=([1, 4, 5], [1, 2, 3]))  # N,H',W',O
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    out = np.ascontiguousarray(out)
    rec = Record("conv2d", {"x": x, "kernel": kernel, "pad": (ph, pw), "single": single})
    return (out[0] if single else out), rec


def _conv2d_input_grad(dout, kernel, in_hw, pad):
    # full correlation of dout with the flipped, channel-transposed kernel
    o, c, kh, kw = kernel.shape
    dpad = np.pad(dout, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    flipped = kernel[:, :, ::-1, ::-1]
    cols = sliding_window_view(dpad, (kh, kw), axis=(2, 3))
    dxp = np.tensordot(cols, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
    (pt, _), (pl, _) = pad
    h, w = in_hw
    return np.ascontiguousarray(dxp[:, :, pt:pt + h, pl:pl + w])


@_rule("conv2d")
def _conv2d_backward(saved, dout):
    x, kernel, pad = saved["x"], saved["kernel"], saved["pad"]
    if saved["single"]:
        dout = dout[None]
    kh, kw = kernel.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), pad[0], pad[1])) if any(pad[0] + pad[1]) else x
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    dkernel = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))
    dbias = dout.sum(axis=(0, 2, 3))
    dx = _conv2d_input_grad(dout, kernel, x.shape[2:], pad)
    return (dx[0] if saved["single"] else dx), dkernel, dbias


def conv1d(x, kernel, bias, padding: str = "valid"):
    """1-D cross-correlation; same conventions as :func:`conv2d`."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or kernel.ndim != 3:
        raise DimensionError(f"conv1d expects input [N,]C,L and kernel O,C,k; got {x.shape} and {kernel.shape}")
    out, rec = conv2d(x[:, :, None, :], kernel[:, :, None, :], bias, padding=padding)
    out = np.ascontiguousarray(out[:, :, 0, :])
    return (out[0] if single else out), Record("conv1d", {"inner": rec, "single": single})


@_rule("conv1d")
def _conv1d_backward(saved, dout):
    if saved["single"]:
        dout = dout[None]
    dx, dk, db = _conv2d_backward(saved["inner"].saved, dout[:, :, None, :])
    dx = dx[:, :, 0, :]
    return (dx[0] if saved["single"] else dx), dk[:, :, 0, :], db


# ---------------------------------------------------------------------------
# dense, pooling, dropout
# ---------------------------------------------------------------------------

def dense(x, weight, bias):
    """``weight @ x + bias`` for ``x`` of shape ``[n]`` or ``[N, n]``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"dense inner axis mismatch: input {x.shape}, weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"dense bias axis mismatch: bias {bias.shape}, weight {weight.shape}")
    return x @ weight.T + bias, Record("dense", {"x": x, "weight": weight})


@_rule("dense")
def _dense_backward(saved, dout):
    x, weight = saved["x"], saved["weight"]
    dx = dout @ weight
    if x.ndim == 1:
        return dx, np.outer(dout, x), dout
    return dx, dout.T @ x, dout.sum(axis=0)


def maxpool2d(x, size: int = 2):
    """Non-overlapping max pooling over the last two axes; trailing rows/cols are dropped."""
    x = as_tensor(x)
    *lead, h, w = x.shape
    ho, wo = h // size, w // size
    xc = x[..., :ho * size, :wo * size]
    blocks = xc.reshape(*lead, ho, size, wo, size).swapaxes(-3, -2).reshape(*lead, ho, wo, size * size)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, Record("maxpool2d", {"idx": idx, "shape": x.shape, "size": size})


@_rule("maxpool2d")
def _maxpool2d_backward(saved, dout):
    idx, shape, size = saved["idx"], saved["shape"], saved["size"]
    *lead, h, w = shape
    ho, wo = idx.shape[-2:]
    blocks = np.zeros((*lead, ho, wo, size * size))
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(*lead, ho, wo, size, size).swapaxes(-3, -2).reshape(*lead, ho * size, wo * size)
    dx = np.zeros(shape)
    dx[..., :ho * size, :wo * size] = blocks
    return (dx,)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool, spatial: bool = False):
    """Inverted dropout. ``spatial`` drops whole channels (axis 1 of a batch, axis 0 of one example)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x, Record("dropout", {"mask": None})
    if spatial:
        lead = 2 if x.ndim >= 4 else 1
        keep = rng.random(x.shape[:lead]) >= rate
        keep = keep.reshape(keep.shape + (1,) * (x.ndim - lead))
    else:
        keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, Record("dropout", {"mask": mask})


@_rule("dropout")
def _dropout_backward(saved, dout):
    mask = saved["mask"]
    return (dout if mask is None else dout * mask),


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------

def sigmoid(z):
    return expit(np.asarray(z, dtype=DTYPE))


def softplus(z):
    return np.logaddexp(0.0, z)


_UNARY = {
    "sigmoid": (sigmoid, lambda a, y: y * (1.0 - y)),
    "tanh": (np.tanh, lambda a, y: 1.0 - y * y),
    "exp": (np.exp, lambda a, y: y),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a, y: (a > 0).astype(DTYPE)),
}
_BINARY = ("hadamard", "add")


def elementwise(kind: str, a, b=None):
    """Apply a pointwise op. ``scale`` takes a scalar (or broadcastable) ``b``."""
    a = as_tensor(a)
    if kind in _UNARY:
        y = _UNARY[kind][0](a)
        return y, Record(kind, {"a": a, "y": y})
    if kind == "scale":
        s = np.asarray(b, dtype=DTYPE)
        return a * s, Record("scale", {"a": a, "s": s})
    if kind in _BINARY:
        b = as_tensor(b)
        if a.shape != b.shape:
            raise DimensionError(f"{kind} needs identical shapes, got {a.shape} and {b.shape}")
        y = a * b if kind == "hadamard" else a + b
        return y, Record(kind, {"a": a, "b": b})
    raise ValueError(f"unknown elementwise kind {kind!r}")


for _name, (_, _deriv) in _UNARY.items():
    _rule(_name)(lambda saved, g, _d=_deriv: (g * _d(saved["a"], saved["y"]),))


@_rule("scale")
def _scale_backward(saved, g):
    a, s = saved["a"], saved["s"]
    ds = (g * a).sum() if s.ndim == 0 else g * a
    return g * s, ds


@_rule("hadamard")
def _hadamard_backward(saved, g):
    return g * saved["b"], g * saved["a"]


@_rule("add")
def _add_backward(saved, g):
    return g, g
