"""Latent sampling, interpolation geometry, walks, and grid rendering."""

import io

import numpy as np
import pytest

from lesionforge import latent as L
from lesionforge import zoo
from lesionforge.data import denormalize, records_to_array, synth_blob_dataset


# ---------------------------------------------------------------------------
# sampling


def test_sample_latents_deterministic():
    a = L.sample_latents(3, 5, 8)
    b = L.sample_latents(3, 5, 8)
    for va, vb in zip(a, b):
        assert np.array_equal(va.values, vb.values)
        assert va.dim == 8


def test_sample_latents_distinct_indices():
    zs = L.sample_latents(3, 4, 8)
    assert not np.array_equal(zs[0].values, zs[1].values)
    assert zs[0].seed == 3 and zs[1].index == 1


def test_sample_latents_moments():
    zs = L.sample_latents(0, 10000, 8)
    mat = np.stack([z.values for z in zs])
    assert np.all(np.abs(mat.mean(axis=0)) < 0.05)
    assert np.all(np.abs(mat.var(axis=0) - 1.0) < 0.05)


def test_sample_latents_validation():
    with pytest.raises(L.LatentError):
        L.sample_latents(0, 0, 8)


# ---------------------------------------------------------------------------
# interpolation


def test_linear_endpoints_exact():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(16).astype(np.float32), \
        rng.standard_normal(16).astype(np.float32)
    path = L.interpolate(a, b, 7, "linear")
    assert np.array_equal(path[0], a)
    assert np.array_equal(path[-1], b)


def test_linear_midpoint():
    a = np.zeros(4, np.float32)
    b = np.ones(4, np.float32)
    path = L.interpolate(a, b, 3, "linear")
    assert np.allclose(path[1], 0.5)


def test_linear_collinearity():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(32), rng.standard_normal(32)
    path = L.interpolate(a, b, 3, "linear")
    residual = np.abs(path[1] - 0.5 * (path[0] + path[2])).max()
    assert residual < 1e-6


def test_spherical_endpoints_exact():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(16).astype(np.float32)
    b = rng.standard_normal(16).astype(np.float32)
    path = L.interpolate(a, b, 9, "spherical")
    assert np.allclose(path[0], a, atol=1e-6)
    assert np.allclose(path[-1], b, atol=1e-6)


def test_spherical_preserves_equal_norms():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(24)
    b = rng.standard_normal(24)
    b *= np.linalg.norm(a) / np.linalg.norm(b)
    path = L.interpolate(a, b, 16, "spherical")
    norms = np.linalg.norm(path, axis=1)
    assert np.all(np.abs(norms - np.linalg.norm(a)) < 1e-5)


def test_spherical_rejects_zero_vector():
    with pytest.raises(L.LatentError, match="zero"):
        L.interpolate(np.zeros(4), np.ones(4), 4, "spherical")


def test_interpolate_validation():
    with pytest.raises(L.LatentError, match="mismatch"):
        L.interpolate(np.ones(3), np.ones(4), 4)
    with pytest.raises(L.LatentError, match="steps"):
        L.interpolate(np.ones(3), np.zeros(3), 1)
    with pytest.raises(L.LatentError, match="mode"):
        L.interpolate(np.ones(3), np.zeros(3), 4, "cubic")


def test_interpolate_accepts_latent_vectors():
    zs = L.sample_latents(0, 2, 8)
    path = L.interpolate(zs[0], zs[1], 5)
    assert path.shape == (5, 8)


# ---------------------------------------------------------------------------
# walks


def test_walkspec_validation():
    with pytest.raises(L.LatentError):
        L.WalkSpec(anchor_seeds=[1])
    with pytest.raises(L.LatentError):
        L.WalkSpec(anchor_seeds=[1, 2], steps=0)
    with pytest.raises(L.LatentError):
        L.WalkSpec(anchor_seeds=[1, 2], mode="bezier")


def test_walkspec_json_roundtrip():
    spec = L.WalkSpec(anchor_seeds=[4, 9, 2], steps=6, mode="spherical")
    assert L.WalkSpec.from_json(spec.to_json()) == spec


def _tiny_generator(seed=0):
    gen, _ = zoo.build_dcgan(latent_dim=8, target_res=8, base_channels=8,
                             seed=seed)
    return gen


def test_walk_two_steps_is_exactly_the_anchors():
    gen = _tiny_generator()
    spec = L.WalkSpec(anchor_seeds=[1, 2], steps=2)
    imgs = L.manifold_walk(gen, spec, dim=8)
    assert imgs.shape == (2, 3, 8, 8)
    anchors = np.stack([a.values for a in L.anchor_latents(spec, 8)])
    direct = L._generate(gen, anchors)
    assert np.array_equal(imgs, direct)


def test_walk_lengths_and_determinism():
    gen = _tiny_generator()
    spec = L.WalkSpec(anchor_seeds=[1, 2, 3], steps=5)
    imgs = L.manifold_walk(gen, spec, dim=8)
    assert imgs.shape[0] == 5 + 4  # shared anchor counted once at the join
    again = L.manifold_walk(gen, spec, dim=8)
    assert np.array_equal(imgs, again)
    anchors_only = L.manifold_walk(gen, L.WalkSpec([1, 2, 3], steps=1), dim=8)
    assert anchors_only.shape[0] == 3


def test_walk_smoother_than_independent_samples():
    gen = _tiny_generator(seed=7)
    spec = L.WalkSpec(anchor_seeds=[5, 6], steps=12)
    frames = L.manifold_walk(gen, spec, dim=8)
    walk_mad = np.mean(np.abs(np.diff(frames, axis=0)))
    free = L._generate(gen, np.stack(
        [z.values for z in L.sample_latents(99, 20, 8)]))
    free_mad = np.mean(np.abs(free[:-1] - free[1:]))
    assert walk_mad < free_mad


def test_progressive_generator_walk():
    sched = zoo.ProgressiveSchedule.ramp(4, 8, 2, 2)
    gen, _ = zoo.build_progressive(sched, latent_dim=8, base_channels=8, seed=0)
    imgs = L.manifold_walk(gen, L.WalkSpec([1, 2], steps=3), dim=8)
    assert imgs.shape == (3, 3, 4, 4)


# ---------------------------------------------------------------------------
# grid rendering


def _decode_png(blob):
    from PIL import Image

    img = Image.open(io.BytesIO(blob))
    return np.asarray(img.convert("RGB")), img


def test_grid_single_cell():
    img = records_to_array(synth_blob_dataset(0, 1, 8))
    blob = L.render_grid(img, columns=1, cell_border=2)
    arr, pil = _decode_png(blob)
    assert arr.shape == (12, 12, 3)
    inner = arr[2:10, 2:10]
    assert np.array_equal(inner, denormalize(img[0]).transpose(1, 2, 0))
    assert np.all(arr[0, :] == 0) and np.all(arr[:, 0] == 0)


def test_grid_layout_dimensions():
    imgs = records_to_array(synth_blob_dataset(1, 6, 8))
    arr, _ = _decode_png(L.render_grid(imgs, columns=3, cell_border=1))
    assert arr.shape == (2 * 10, 3 * 10, 3)


def test_grid_partial_last_row():
    imgs = records_to_array(synth_blob_dataset(2, 5, 8))
    arr, _ = _decode_png(L.render_grid(imgs, columns=3, cell_border=1))
    assert arr.shape == (2 * 10, 3 * 10, 3)
    assert np.all(arr[10:, 2 * 10:] == 0)  # empty cell stays border-colored


def test_grid_carries_no_metadata():
    imgs = records_to_array(synth_blob_dataset(3, 1, 8))
    _, pil = _decode_png(L.render_grid(imgs, columns=1))
    assert getattr(pil, "text", {}) == {}


def test_grid_validation():
    imgs = records_to_array(synth_blob_dataset(0, 1, 8))
    with pytest.raises(L.LatentError):
        L.render_grid(imgs, columns=0)
    with pytest.raises(L.LatentError):
        L.render_grid(np.empty((0, 3, 8, 8), np.float32), columns=1)


# ---------------------------------------------------------------------------
# memorization probe


def test_generated_anchors_keep_distance_from_training_set():
    train = records_to_array(synth_blob_dataset(0, 64, 8))
    gen = _tiny_generator()
    imgs = L.manifold_walk(gen, L.WalkSpec([1, 2, 3], steps=1), dim=8)
    dists = L.nearest_neighbor_distances(imgs, train)
    assert np.all(dists > 0.0)
