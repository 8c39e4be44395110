import json

import numpy as np
import pytest
from scipy import stats

from temrnn import synth
from temrnn.synth import (FormatError, GeneratorSpec, generate_dataset, generate_sample, generate_samples,
                          ingest_cifar10, read_dataset, render_step, sample_rng, sample_trajectory)


def _population(regime, n_per_class=500, seed=0):
    spec = GeneratorSpec(regime=regime, seed=seed)
    out = {0: [], 1: []}
    for label in (0, 1):
        for i in range(n_per_class):
            out[label].append(sample_trajectory(spec, label, sample_rng(seed, 2 * i + label)))
    return spec, out


def test_same_size_regime_statistics():
    _, pop = _population("same-size")
    sizes = {k: np.array([p[0] for p in v]) for k, v in pop.items()}
    gaps = {k: np.array([p[1] for p in v]) for k, v in pop.items()}
    rel = np.abs(sizes[0].mean(0) - sizes[1].mean(0)) / sizes[1].mean(0)
    assert np.all(rel < 0.05)
    for t in range(sizes[0].shape[1]):
        assert stats.ttest_ind(sizes[0][:, t], sizes[1][:, t]).pvalue > 0.001
    assert abs(gaps[0].mean() / gaps[1].mean() - 3.0) < 0.2


def test_same_interval_regime_statistics():
    spec, pop = _population("same-interval")
    sizes = {k: np.array([p[0] for p in v]) for k, v in pop.items()}
    gaps = {k: np.array([p[1] for p in v]) for k, v in pop.items()}
    assert np.all(sizes[1].mean(0)[1:] > sizes[0].mean(0)[1:])
    assert stats.ttest_ind(gaps[0].ravel(), gaps[1].ravel()).pvalue > 0.001
    # closed-form expectation of the final size for the malignant class
    a = (0 - spec.interval_mean) / spec.interval_std
    gap_mean = stats.truncnorm.mean(a, np.inf, loc=spec.interval_mean, scale=spec.interval_std)
    expected = spec.init_size_mean + spec.malignant_factor * spec.benign_rate * gap_mean * (spec.time_points - 1)
    assert sizes[1][:, -1].mean() == pytest.approx(expected, rel=0.05)


@pytest.mark.parametrize("regime", synth.REGIMES)
def test_trajectory_invariants(regime):
    spec = GeneratorSpec(regime=regime)
    for i in range(50):
        sizes, gaps, rate = sample_trajectory(spec, i % 2, sample_rng(1, i))
        assert np.all(np.diff(sizes) > 0) and np.all(gaps > 0)
        np.testing.assert_allclose(sizes[-1], sizes[0] + rate * gaps.sum(), rtol=1e-12)


def test_distances_from_intervals():
    assert synth.distances_from_intervals([10.0, 5.0, 2.0]).tolist() == [17.0, 7.0, 2.0, 0.0]


def test_truncation_failure_raises():
    with pytest.raises(synth.GenerationError):
        synth._truncated_normal(np.random.default_rng(0), -100.0, 1.0, size=3)


def test_invalid_spec():
    for kw in ({"malignant_factor": 1.0}, {"time_points": 1}, {"regime": "x"}, {"benign_rate": 0.0}):
        with pytest.raises(ValueError):
            GeneratorSpec(**kw)


def test_render_zero_blob_zero_noise_is_identity():
    bg = np.random.default_rng(0).random((1, 16, 16))
    img, clipped = render_step(bg, 0.0, (8, 8), 0.0, np.random.default_rng(1))
    assert np.array_equal(img, bg) and not clipped


@pytest.mark.parametrize("area", [10.0, 40.0, 120.0])
def test_render_disc_area(area):
    img, clipped = render_step(np.zeros((1, 32, 32)), area, (16.0, 16.0), 0.0, np.random.default_rng(0),
                               brightness=0.8)
    assert not clipped
    assert img.sum() == pytest.approx(area * 0.8, rel=0.10)


def test_render_flags_clipping():
    _, clipped = render_step(np.zeros((1, 16, 16)), 100.0, (2.0, 2.0), 0.0, np.random.default_rng(0))
    assert clipped


def test_render_noise_density():
    n = 20 * 4096
    flipped = np.mean([render_step(np.full((1, 64, 64), 0.5), 0.0, (0, 0), 0.1, np.random.default_rng(s))[0] != 0.5
                       for s in range(20)])
    assert abs(flipped - 0.1) < 3 * np.sqrt(0.09 / n)


def test_generation_is_deterministic_and_order_free():
    spec = GeneratorSpec(image_size=16, seed=4)
    batch = generate_samples(spec, 10)
    lone = generate_sample(spec, 7, batch[7].sample.label)
    assert all(np.array_equal(x, y) for x, y in zip(batch[7].sample.inputs, lone.sample.inputs))
    assert batch[7].sizes == lone.sizes


def test_generated_distances_are_valid():
    for s in generate_samples(GeneratorSpec(image_size=16, regime="same-size"), 20):
        d = np.asarray(s.sample.distances)
        assert d[-1] == 0 and np.all(np.diff(d) <= 0)
        assert len(s.sample.inputs) == 5 and s.sample.inputs[0].shape == (1, 16, 16)


def test_dataset_file_roundtrip_and_prevalence(tmp_path):
    spec = GeneratorSpec.for_image_size(16, seed=3)
    manifest = generate_dataset(spec, 1000, tmp_path / "a.dlsq")
    assert manifest["counts"] == {"benign": 500, "malignant": 500}
    data = read_dataset(tmp_path / "a.dlsq")
    assert data.inputs.shape == (1000, 5, 1, 16, 16)
    assert np.bincount(data.labels).tolist() == [500, 500]
    assert np.all(data.distances[:, -1] == 0) and np.all(np.diff(data.distances, axis=1) <= 0)
    assert data.inputs.min() >= 0 and data.inputs.max() <= 1
    on_disk = json.loads((tmp_path / "a.json").read_text())
    assert on_disk["spec"]["seed"] == 3 and on_disk["format_version"] == 1


def test_dataset_regeneration_is_byte_identical(tmp_path):
    spec = GeneratorSpec.for_image_size(16, seed=5, regime="same-size")
    generate_dataset(spec, 40, tmp_path / "a.dlsq")
    generate_dataset(spec, 40, tmp_path / "b.dlsq")
    assert (tmp_path / "a.dlsq").read_bytes() == (tmp_path / "b.dlsq").read_bytes()


def test_dataset_header_layout(tmp_path):
    generate_dataset(GeneratorSpec.for_image_size(8, channels=3), 4, tmp_path / "h.dlsq")
    raw = (tmp_path / "h.dlsq").read_bytes()
    assert raw[:4] == b"DLSQ"
    assert synth._HEADER.unpack_from(raw)[1:] == (1, 4, 5, 3, 8, 8)
    assert len(raw) == 16 + 4 * (1 + 5 * 4 + 5 * 3 * 8 * 8 * 4)


def test_dataset_reader_rejects_damage(tmp_path):
    generate_dataset(GeneratorSpec.for_image_size(8), 2, tmp_path / "d.dlsq")
    raw = (tmp_path / "d.dlsq").read_bytes()
    (tmp_path / "t.dlsq").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        read_dataset(tmp_path / "t.dlsq")
    (tmp_path / "m.dlsq").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        read_dataset(tmp_path / "m.dlsq")


def _cifar_bytes(n, rng):
    recs = rng.integers(0, 256, size=(n, 3073), dtype=np.uint8)
    return recs, recs.tobytes()


def test_cifar_reader(tmp_path):
    recs, raw = _cifar_bytes(2, np.random.default_rng(0))
    (tmp_path / "b.bin").write_bytes(raw)
    pool = ingest_cifar10(tmp_path / "b.bin")
    assert pool.shape == (2, 3, 32, 32)
    np.testing.assert_array_equal(np.rint(pool * 255).astype(np.uint8).reshape(2, -1), recs[:, 1:])
    # row-major R, G, B planes
    assert pool[1, 2, 0, 5] == recs[1, 1 + 2 * 1024 + 5] / 255.0


def test_cifar_reader_rejects_truncation(tmp_path):
    _, raw = _cifar_bytes(2, np.random.default_rng(0))
    (tmp_path / "b.bin").write_bytes(raw[:-10])
    with pytest.raises(FormatError, match="offset 3073"):
        ingest_cifar10(tmp_path / "b.bin")


def test_cifar_backgrounds_are_used(tmp_path):
    _, raw = _cifar_bytes(3, np.random.default_rng(1))
    (tmp_path / "b.bin").write_bytes(raw)
    pool = ingest_cifar10(tmp_path / "b.bin")
    spec = GeneratorSpec(seed=2, noise_density=0.0, channels=3)
    s = generate_sample(spec, 0, 0, backgrounds=pool)
    assert s.sample.inputs[0].shape == (3, 32, 32)
    cy, cx = s.center
    yy, xx = np.mgrid[0:32, 0:32]
    far = np.hypot(yy + 0.5 - cy, xx + 0.5 - cx) > np.sqrt(s.sizes[-1] / np.pi) + 1.0
    last = s.sample.inputs[-1]
    assert any(np.allclose(last[:, far], p[:, far] * spec.background_contrast) for p in pool)


def test_feature_samples():
    spec = GeneratorSpec(seed=1)
    samples = synth.generate_feature_samples(spec, 20)
    assert all(s.inputs[0].shape == (5, 64) and len(s.inputs) == 2 for s in samples)
    assert sum(s.label for s in samples) == 10
    assert all(s.distances[-1] == 0 for s in samples)
