"""Synthetic longitudinal "nodule growth" sequences.

Each sample is a fixed background with a bright disc whose area grows
linearly in time; malignant discs grow ``malignant_factor`` times faster.
Two sampling regimes decide what carries the class signal:

``same-interval``
    scan gaps come from one distribution for both classes, so malignant
    discs end up larger.
``same-size``
    disc areas per scan come from one class-independent schedule and the gaps
    are back-computed from the class growth rate, so only the timing tells
    the classes apart.

Distances are the time left until the last scan (``d_T = 0``), in days.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import zoom

from .cells import SequenceSample

REGIMES = ("same-interval", "same-size")
DATASET_MAGIC = b"DLSQ"
DATASET_VERSION = 1
CIFAR_RECORD = 3073
_HEADER = struct.Struct("<4sHIBBHH")


class GenerationError(RuntimeError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class GeneratorSpec:
    image_size: int = 32
    channels: int = 1
    time_points: int = 5
    benign_rate: float = 0.16  # disc area (px^2) gained per day
    malignant_factor: float = 3.0
    regime: str = "same-interval"
    interval_mean: float = 60.0  # days
    interval_std: float = 40.0
    rate_std: float = 0.2  # relative spread of the per-sample growth rate
    init_size_mean: float = 20.0  # px^2
    init_size_std: float = 6.0
    size_step_mean: float = 16.0  # px^2 per scan, same-size regime
    size_step_std: float = 4.8
    noise_density: float = 0.03
    background_contrast: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.malignant_factor <= 1:
            raise ValueError("malignant_factor must exceed 1")
        if self.time_points < 2:
            raise ValueError("need at least two time points")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        positive = ("benign_rate", "interval_mean", "init_size_mean", "size_step_mean", "image_size")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.noise_density < 1:
            raise ValueError("noise_density must lie in [0, 1)")

    @classmethod
    def for_image_size(cls, image_size: int, **kw) -> "GeneratorSpec":
        """Defaults with every area quantity rescaled from a 32x32 frame to ``image_size``."""
        f = (image_size / 32.0) ** 2
        base = cls()
        for name in ("benign_rate", "init_size_mean", "init_size_std", "size_step_mean", "size_step_std"):
            kw.setdefault(name, getattr(base, name) * f)
        return cls(image_size=image_size, **kw)

    def rate(self, label: int) -> float:
        return self.benign_rate * (self.malignant_factor if label else 1.0)


@dataclass
class GeneratedSample:
    sample: SequenceSample
    seed: tuple
    growth_rate: float
    intervals: list
    sizes: list
    center: tuple
    clipped: bool = False
    meta: dict = field(default_factory=dict)


def sample_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-sample generator; independent of the order samples are produced in."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


def _truncated_normal(rng, mean, std, low=0.0, size=None, retries=100):
    out = np.asarray(rng.normal(mean, std, size), dtype=float)
    for _ in range(retries):
        bad = out <= low
        if not bad.any():
            return out
        out[bad] = rng.normal(mean, std, int(bad.sum()))
    raise GenerationError(f"could not draw values above {low} from N({mean}, {std}) in {retries} retries")


def sample_trajectory(spec: GeneratorSpec, label: int, rng: np.random.Generator):
    """Disc areas for each scan and the ``T - 1`` gaps between scans.

    Returns ``(sizes, intervals, growth_rate)``.
    """
    steps = spec.time_points
    rate = spec.rate(label) * float(_truncated_normal(rng, 1.0, spec.rate_std, low=0.05))
    s0 = float(_truncated_normal(rng, spec.init_size_mean, spec.init_size_std, low=0.5))
    if spec.regime == "same-interval":
        intervals = _truncated_normal(rng, spec.interval_mean, spec.interval_std, size=steps - 1)
        increments = rate * intervals
    else:
        increments = _truncated_normal(rng, spec.size_step_mean, spec.size_step_std, size=steps - 1)
        intervals = increments / rate
    sizes = s0 + np.concatenate([[0.0], np.cumsum(increments)])
    return sizes, intervals, rate


def distances_from_intervals(intervals) -> np.ndarray:
    """``d_t`` = total time after scan ``t``; the last entry is 0."""
    intervals = np.asarray(intervals, dtype=float)
    tail = np.cumsum(intervals[::-1])[::-1]
    return np.concatenate([tail, [0.0]])


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def procedural_background(spec: GeneratorSpec, rng) -> np.ndarray:
    """Smooth random texture in ``[0, background_contrast]``."""
    n = spec.image_size
    coarse = rng.random((spec.channels, max(2, n // 4), max(2, n // 4)))
    img = zoom(coarse, (1, n / coarse.shape[1], n / coarse.shape[2]), order=1)[:, :n, :n]
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    return img * spec.background_contrast


def fit_background(image: np.ndarray, spec: GeneratorSpec) -> np.ndarray:
    """Convert a ``[3, H, W]`` image in [0, 1] to the channel count and size of ``spec``."""
    img = np.asarray(image, dtype=float)
    if spec.channels == 1 and img.shape[0] == 3:
        img = (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2])[None]
    n = spec.image_size
    if img.shape[1:] != (n, n):
        img = zoom(img, (1, n / img.shape[1], n / img.shape[2]), order=1)[:, :n, :n]
    return np.clip(img, 0.0, 1.0) * spec.background_contrast


def render_step(background, blob_size: float, center, noise_density: float, rng,
                brightness: float = 1.0):
    """Draw a soft-edged disc of area ``blob_size`` and add salt-and-pepper noise.

    Returns ``(image, clipped)``; ``clipped`` is True when the disc leaves the frame.
    """
    img = np.array(background, dtype=float, copy=True)
    _, h, w = img.shape
    clipped = False
    if blob_size > 0:
        radius = np.sqrt(blob_size / np.pi)
        cy, cx = center
        yy, xx = np.mgrid[0:h, 0:w]
        dist = np.hypot(yy + 0.5 - cy, xx + 0.5 - cx)
        alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)
        img = img * (1.0 - alpha) + brightness * alpha
        clipped = cy - radius < 0 or cx - radius < 0 or cy + radius > h or cx + radius > w
    if noise_density > 0:
        flip = rng.random((h, w)) < noise_density
        salt = rng.random((h, w)) < 0.5
        img[:, flip & salt] = 1.0
        img[:, flip & ~salt] = 0.0
    return np.clip(img, 0.0, 1.0), bool(clipped)


def generate_sample(spec: GeneratorSpec, index: int, label: int, backgrounds=None) -> GeneratedSample:
    rng = sample_rng(spec.seed, index)
    sizes, intervals, rate = sample_trajectory(spec, label, rng)
    if backgrounds is not None and len(backgrounds):
        bg = fit_background(backgrounds[rng.integers(len(backgrounds))], spec)
    else:
        bg = procedural_background(spec, rng)
    n = spec.image_size
    margin = np.sqrt(sizes[-1] / np.pi) + 1.0
    if 2 * margin < n:
        center = tuple(rng.uniform(margin, n - margin, 2))
    else:
        center = (n / 2.0, n / 2.0)
    frames, clipped = [], 2 * margin >= n
    for s in sizes:
        frame, c = render_step(bg, s, center, spec.noise_density, rng)
        frames.append(frame)
        clipped |= c
    seq = SequenceSample(frames, distances_from_intervals(intervals), int(label))
    return GeneratedSample(seq, (spec.seed, index), rate, list(intervals), list(sizes), center, clipped)


def balanced_labels(n: int, seed: int, prevalence: float = 0.5) -> np.ndarray:
    n_pos = int(round(n * prevalence))
    labels = np.array([1] * n_pos + [0] * (n - n_pos), dtype=np.int64)
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0x1abe1])).permutation(labels)


def generate_samples(spec: GeneratorSpec, n: int, prevalence: float = 0.5, backgrounds=None,
                     offset: int = 0) -> list[GeneratedSample]:
    """``n`` samples with exactly ``round(n * prevalence)`` positives.

    ``offset`` shifts the sample indices so a train and a test set drawn from
    the same spec never share per-sample seeds.
    """
    labels = balanced_labels(n, spec.seed + offset, prevalence)
    return [generate_sample(spec, offset + i, int(y), backgrounds) for i, y in enumerate(labels)]


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Arrays ready for a model: inputs ``[N, T, C, H, W]``, distances ``[N, T]``, labels ``[N]``."""

    inputs: np.ndarray
    distances: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.distances[idx], self.labels[idx])

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        seqs = [s.sample if isinstance(s, GeneratedSample) else s for s in samples]
        xs = np.stack([np.stack([np.asarray(x, dtype=float) for x in s.inputs]) for s in seqs])
        d = np.stack([np.asarray(s.distances, dtype=float) for s in seqs])
        y = np.array([s.label for s in seqs], dtype=np.int64)
        return cls(xs, d, y)


def write_dataset(path, data: Dataset) -> None:
    n, steps, ch, h, w = data.inputs.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, steps, ch, h, w))
        for i in range(n):
            fh.write(struct.pack("<B", int(data.labels[i])))
            fh.write(np.asarray(data.distances[i], dtype="<f4").tobytes())
            fh.write(np.asarray(data.inputs[i], dtype="<f4").tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, n, steps, ch, h, w = _HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pix = steps * ch * h * w
    rec = np.dtype([("label", "u1"), ("dist", "<f4", (steps,)), ("pix", "<f4", (pix,))])
    body = len(raw) - _HEADER.size
    if body != n * rec.itemsize:
        raise FormatError(f"{path}: expected {n * rec.itemsize} bytes of records, found {body}")
    arr = np.frombuffer(raw, dtype=rec, count=n, offset=_HEADER.size)
    return Dataset(arr["pix"].astype(float).reshape(n, steps, ch, h, w),
                   arr["dist"].astype(float), arr["label"].astype(np.int64))


def generate_dataset(spec: GeneratorSpec, n_samples: int, out_path, prevalence: float = 0.5,
                     backgrounds=None, offset: int = 0, extra: dict | None = None) -> dict:
    """Write a dataset file plus ``<name>.json`` manifest; returns the manifest."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    samples = generate_samples(spec, n_samples, prevalence, backgrounds, offset)
    data = Dataset.from_samples(samples)
    out_path = Path(out_path)
    write_dataset(out_path, data)
    counts = np.bincount(data.labels, minlength=2)
    manifest = {
        "format_version": DATASET_VERSION,
        "spec": asdict(spec),
        "seed": spec.seed,
        "index_offset": offset,
        "n_samples": n_samples,
        "prevalence": prevalence,
        "counts": {"benign": int(counts[0]), "malignant": int(counts[1])},
        "clipped_samples": int(sum(s.clipped for s in samples)),
        "background": "cifar10" if backgrounds is not None else "procedural",
    }
    if extra:
        manifest.update(extra)
    out_path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# CIFAR-10 backgrounds
# ---------------------------------------------------------------------------

def ingest_cifar10(path) -> np.ndarray:
    """Read a CIFAR-10 binary batch into ``[N, 3, 32, 32]`` floats in [0, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        start = len(raw) - len(raw) % CIFAR_RECORD
        raise FormatError(f"{path}: truncated CIFAR-10 record starting at byte offset {start} "
                          f"({len(raw) % CIFAR_RECORD} of {CIFAR_RECORD} bytes)")
    recs = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    return recs[:, 1:].reshape(-1, 3, 32, 32).astype(float) / 255.0


# ---------------------------------------------------------------------------
# feature-level sequences
# ---------------------------------------------------------------------------

def generate_feature_samples(spec: GeneratorSpec, n: int, prevalence: float = 0.5, offset: int = 0,
                             regions: int = 5, width: int = 64, noise: float = 0.3) -> list[SequenceSample]:
    """Stand-in for detector features: ``[regions, width]`` per scan.

    Region 0 carries the growing nodule (its features drift along a fixed
    direction in proportion to the disc area); the other regions are
    per-subject constants. Scans are truncated to the last two.
    """
    direction = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0xfea7])).normal(size=width)
    direction /= np.linalg.norm(direction)
    scale = spec.init_size_mean + spec.size_step_mean * (spec.time_points - 1)
    labels = balanced_labels(n, spec.seed + offset, prevalence)
    out = []
    for i, y in enumerate(labels):
        rng = sample_rng(spec.seed, offset + i)
        sizes, intervals, _ = sample_trajectory(spec, int(y), rng)
        base = rng.normal(size=(regions, width))
        frames = []
        for s in sizes:
            f = base + noise * rng.normal(size=(regions, width))
            f[0] += 4.0 * (s / scale) * direction
            frames.append(f)
        d = distances_from_intervals(intervals)
        out.append(SequenceSample(frames[-2:], d[-2:], int(y)))
    return out


def duplicate_cross_sectional(x, label: int = 0) -> SequenceSample:
    """A single-scan subject as a two-step sequence with zero distances."""
    return SequenceSample([x, x], [0.0, 0.0], label)
