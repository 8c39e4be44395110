"""Sequence classifiers built from the temporal cells and two small heads.

Image task: a recurrent conv cell over ``[C, H, W]`` frames, its final hidden
state fed to a LeNet-style head (conv-pool-relu twice, two dense layers,
dropout after the second conv and between the dense layers).

Feature task: each step is ``[5, 64]`` (five candidate regions as channels,
64 features each); a 1-D conv cell runs along the feature axis and the final
hidden state is average-pooled into a dense layer.

``mccnn`` skips recurrence: the steps are concatenated along the channel axis
and the distances are never read.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tc
from .cells import CELL_KINDS, SequenceSample, bptt_backward, init_cell_params, unroll

MODEL_KINDS = ("mccnn",) + CELL_KINDS
FEATURE_SHAPE = (5, 64)


@dataclass
class ModelConfig:
    task: str = "image"
    cell: str = "dlstm"
    in_channels: int = 1
    spatial: tuple = (32, 32)
    steps: int = 5
    hidden: int = 4
    kernel: int = 3
    conv1_channels: int = 10
    conv2_channels: int = 20
    head_kernel: int = 5
    fc_hidden: int = 50
    dropout: float = 0.5
    tem_a: float = 1.0
    tem_c: float = 0.01
    forget_bias: float = 0.0
    input_mean: float = 0.0
    input_std: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.spatial = tuple(int(s) for s in self.spatial)
        if self.task not in ("image", "feature"):
            raise ValueError(f"task must be 'image' or 'feature', got {self.task!r}")
        if self.cell not in MODEL_KINDS:
            raise ValueError(f"cell must be one of {MODEL_KINDS}, got {self.cell!r}")
        if self.task == "feature" and (self.in_channels, *self.spatial) != FEATURE_SHAPE:
            raise ValueError(f"feature task expects per-step inputs of shape {FEATURE_SHAPE}")

    @classmethod
    def feature(cls, cell: str = "dlstm", **kw) -> "ModelConfig":
        kw.setdefault("hidden", 8)
        kw.setdefault("kernel", 5)
        kw.setdefault("steps", 2)
        return cls(task="feature", cell=cell, in_channels=5, spatial=(64,), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spatial"] = list(self.spatial)
        return d


def fit_input_scaling(config: ModelConfig, inputs) -> ModelConfig:
    """Set ``input_mean``/``input_std`` from training inputs (one scalar each)."""
    x = np.asarray(inputs)
    config.input_mean = float(x.mean())
    config.input_std = float(x.std()) or 1.0
    return config


def _toynet_flat(cfg: ModelConfig) -> int:
    h, w = cfg.spatial
    k = cfg.head_kernel
    h, w = (h - k + 1) // 2, (w - k + 1) // 2
    h, w = (h - k + 1) // 2, (w - k + 1) // 2
    if h < 1 or w < 1:
        raise ValueError(f"image {cfg.spatial} too small for two {k}x{k} conv + pool stages")
    return cfg.conv2_channels * h * w


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class SequenceClassifier:
    """One of the four classifiers, holding its config and a flat parameter dict.

    Parameter names are prefixed ``cell.`` / ``head.`` so a checkpoint is a
    plain name -> array mapping.
    """

    def __init__(self, config: ModelConfig, params: dict | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else self.init_params(np.random.default_rng(seed))

    @property
    def recurrent(self) -> bool:
        return self.config.cell != "mccnn"

    def _head_in_channels(self) -> int:
        cfg = self.config
        if self.recurrent:
            return cfg.hidden
        return cfg.in_channels * cfg.steps

    def init_params(self, rng) -> dict[str, np.ndarray]:
        cfg = self.config
        params = {}
        if self.recurrent:
            cell = init_cell_params(cfg.cell, cfg.in_channels, cfg.hidden, cfg.kernel, cfg.spatial, rng,
                                    a=cfg.tem_a, c=cfg.tem_c, forget_bias=cfg.forget_bias)
            params.update({f"cell.{k}": v for k, v in cell.items()})
        cin = self._head_in_channels()
        if cfg.task == "image":
            k = cfg.head_kernel
            params["head.conv1_w"] = _uniform(rng, cin * k * k, (cfg.conv1_channels, cin, k, k))
            params["head.conv1_b"] = _uniform(rng, cin * k * k, cfg.conv1_channels)
            fan = cfg.conv1_channels * k * k
            params["head.conv2_w"] = _uniform(rng, fan, (cfg.conv2_channels, cfg.conv1_channels, k, k))
            params["head.conv2_b"] = _uniform(rng, fan, cfg.conv2_channels)
            flat = _toynet_flat(cfg)
            params["head.fc1_w"] = _uniform(rng, flat, (cfg.fc_hidden, flat))
            params["head.fc1_b"] = _uniform(rng, flat, cfg.fc_hidden)
            params["head.fc2_w"] = _uniform(rng, cfg.fc_hidden, (2, cfg.fc_hidden))
            params["head.fc2_b"] = _uniform(rng, cfg.fc_hidden, 2)
        else:
            width = cfg.hidden
            if not self.recurrent:
                k = cfg.kernel
                params["head.conv_w"] = _uniform(rng, cin * k, (width, cin, k))
                params["head.conv_b"] = _uniform(rng, cin * k, width)
            params["head.fc_w"] = _uniform(rng, width, (2, width))
            params["head.fc_b"] = _uniform(rng, width, 2)
        return params

    # -- forward ------------------------------------------------------------

    def _check_inputs(self, xs, distances):
        cfg = self.config
        xs = np.asarray(xs, dtype=tc.DTYPE)
        want = (cfg.in_channels, *cfg.spatial)
        if xs.ndim != len(want) + 2 or xs.shape[2:] != want:
            raise tc.DimensionError(f"expected inputs [N, T, {', '.join(map(str, want))}], got {xs.shape}")
        if distances is None:
            distances = np.zeros(xs.shape[:2])
        distances = np.asarray(distances, dtype=tc.DTYPE)
        if distances.shape != xs.shape[:2]:
            raise tc.DimensionError(f"distances {distances.shape} do not match inputs {xs.shape[:2]}")
        if not self.recurrent and xs.shape[1] != cfg.steps:
            raise tc.DimensionError(f"mccnn built for {cfg.steps} steps, got {xs.shape[1]}")
        return xs, distances

    def forward(self, xs, distances=None, training: bool = False, rng=None, params=None):
        """Logits ``[N, 2]`` and a cache for :meth:`backward`."""
        p = self.params if params is None else params
        cfg = self.config
        xs, distances = self._check_inputs(xs, distances)
        if cfg.input_mean != 0.0 or cfg.input_std != 1.0:
            xs = (xs - cfg.input_mean) / cfg.input_std
        n = xs.shape[0]
        cache = {"n": n}
        if self.recurrent:
            cell = {k[5:]: v for k, v in p.items() if k.startswith("cell.")}
            states = unroll(cfg.cell, cell, xs, distances)
            cache["cell"], cache["cell_params"] = states, cell
            feat = states[-1].H
        else:
            feat = xs.reshape(n, xs.shape[1] * xs.shape[2], *xs.shape[3:])
        recs = []
        if cfg.task == "image":
            y, r = tc.conv2d(feat, p["head.conv1_w"], p["head.conv1_b"]); recs.append(r)
            y, r = tc.maxpool2d(y); recs.append(r)
            y, r = tc.elementwise("relu", y); recs.append(r)
            y, r = tc.conv2d(y, p["head.conv2_w"], p["head.conv2_b"]); recs.append(r)
            y, r = tc.dropout(y, cfg.dropout, rng, training, spatial=True); recs.append(r)
            y, r = tc.maxpool2d(y); recs.append(r)
            y, r = tc.elementwise("relu", y); recs.append(r)
            cache["pre_flat"] = y.shape
            y = y.reshape(n, -1)
            y, r = tc.dense(y, p["head.fc1_w"], p["head.fc1_b"]); recs.append(r)
            y, r = tc.elementwise("relu", y); recs.append(r)
            y, r = tc.dropout(y, cfg.dropout, rng, training); recs.append(r)
            y, r = tc.dense(y, p["head.fc2_w"], p["head.fc2_b"]); recs.append(r)
        else:
            y = feat
            if not self.recurrent:
                y, r = tc.conv1d(y, p["head.conv_w"], p["head.conv_b"], padding="same"); recs.append(r)
                y, r = tc.elementwise("relu", y); recs.append(r)
            cache["pool_len"] = y.shape[-1]
            y = y.mean(axis=-1)
            y, r = tc.dense(y, p["head.fc_w"], p["head.fc_b"]); recs.append(r)
        cache["head"] = recs
        return y, cache

    def backward(self, cache, dlogits) -> dict[str, np.ndarray]:
        """Gradients of ``sum(dlogits * logits)`` w.r.t. every parameter."""
        cfg = self.config
        recs = list(cache["head"])
        grads = {}
        g = np.asarray(dlogits, dtype=tc.DTYPE)
        if cfg.task == "image":
            g, grads["head.fc2_w"], grads["head.fc2_b"] = tc.backward(recs.pop(), g)
            for _ in range(2):  # dropout, relu
                (g,) = tc.backward(recs.pop(), g)
            g, grads["head.fc1_w"], grads["head.fc1_b"] = tc.backward(recs.pop(), g)
            g = g.reshape(cache["pre_flat"])
            for _ in range(3):  # relu, pool, dropout2d
                (g,) = tc.backward(recs.pop(), g)
            g, grads["head.conv2_w"], grads["head.conv2_b"] = tc.backward(recs.pop(), g)
            for _ in range(2):  # relu, pool
                (g,) = tc.backward(recs.pop(), g)
            g, grads["head.conv1_w"], grads["head.conv1_b"] = tc.backward(recs.pop(), g)
        else:
            g, grads["head.fc_w"], grads["head.fc_b"] = tc.backward(recs.pop(), g)
            g = np.repeat(g[..., None], cache["pool_len"], axis=-1) / cache["pool_len"]
            if not self.recurrent:
                (g,) = tc.backward(recs.pop(), g)
                g, grads["head.conv_w"], grads["head.conv_b"] = tc.backward(recs.pop(), g)
        if self.recurrent:
            cell_grads, _ = bptt_backward(cache["cell_params"], cache["cell"], g)
            grads.update({f"cell.{k}": v for k, v in cell_grads.items()})
        return grads


def _single(model: SequenceClassifier, sample: SequenceSample, params):
    xs, d = sample.stacked()
    logits, _ = model.forward(xs, d, params=params)
    return logits[0]


def forward_image_model(config: ModelConfig, params, sample: SequenceSample):
    if config.task != "image" or config.cell == "mccnn":
        raise ValueError("forward_image_model needs a recurrent image config")
    return _single(SequenceClassifier(config, params), sample, params)


def forward_feature_model(config: ModelConfig, params, sample: SequenceSample):
    if config.task != "feature" or config.cell == "mccnn":
        raise ValueError("forward_feature_model needs a recurrent feature config")
    return _single(SequenceClassifier(config, params), sample, params)


def forward_mccnn(config: ModelConfig, params, sample: SequenceSample):
    if config.cell != "mccnn":
        raise ValueError("forward_mccnn needs cell='mccnn'")
    shapes = {np.shape(x) for x in sample.inputs}
    if len(shapes) != 1:
        raise tc.DimensionError(f"mccnn steps must share one shape, got {sorted(shapes)}")
    return _single(SequenceClassifier(config, params), sample, params)
