"""SWD metric tests, anchored by an exhaustive small-instance transport oracle."""

import itertools
import json

import numpy as np
import pytest

from lesionforge import swd as S
from lesionforge.data import synth_blob_dataset, records_to_array


# ---------------------------------------------------------------------------
# oracle: brute-force optimal matching for tiny 1-D instances


def exhaustive_w1(a, b):
    n = len(a)
    best = np.inf
    for perm in itertools.permutations(range(n)):
        cost = float(np.mean(np.abs(a - b[list(perm)])))
        best = min(best, cost)
    return best


def sorted_w1(a, b):
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


# ---------------------------------------------------------------------------
# config


def test_config_defaults():
    cfg = S.SwdConfig()
    assert (cfg.patch_size, cfg.patches_per_image) == (7, 64)
    assert (cfg.n_projections, cfg.n_repeats) == (512, 4)
    assert cfg.min_level == 16


def test_config_rejects_even_patch():
    with pytest.raises(S.SwdError):
        S.SwdConfig(patch_size=6)


def test_config_rejects_nonpositive_counts():
    with pytest.raises(S.SwdError):
        S.SwdConfig(n_projections=0)
    with pytest.raises(S.SwdError):
        S.SwdConfig(n_repeats=0)


def test_level_resolutions():
    assert S.level_resolutions(64) == [64, 32, 16]
    assert S.level_resolutions(16) == [16]
    assert S.level_resolutions(8) == [8]
    assert S.SwdConfig().pyramid_levels(64) == 3
    with pytest.raises(S.SwdError):
        S.level_resolutions(24)


# ---------------------------------------------------------------------------
# descriptors


def _blob_images(seed, count, resolution):
    return records_to_array(synth_blob_dataset(seed, count, resolution))


def test_descriptor_length_default_patch():
    imgs = _blob_images(0, 4, 32)
    cfg = S.SwdConfig(patches_per_image=8)
    ds = S.build_descriptors(imgs, 32, cfg, np.random.default_rng(0))
    assert ds.descriptors.shape == (4 * 8, 3 * 7 * 7)


def test_descriptors_deterministic_for_same_seed():
    imgs = _blob_images(1, 4, 32)
    cfg = S.SwdConfig(patches_per_image=8)
    a = S.build_descriptors(imgs, 16, cfg, np.random.default_rng(42))
    b = S.build_descriptors(imgs.copy(), 16, cfg, np.random.default_rng(42))
    assert np.array_equal(a.descriptors, b.descriptors)


def test_descriptors_channel_normalized():
    imgs = _blob_images(2, 8, 32)
    cfg = S.SwdConfig(patches_per_image=32)
    ds = S.build_descriptors(imgs, 32, cfg, np.random.default_rng(3))
    p = cfg.patch_size
    per_channel = ds.descriptors.reshape(-1, 3, p * p)
    for c in range(3):
        vals = per_channel[:, c, :]
        assert abs(vals.mean()) < 1e-3
        assert abs(vals.std() - 1.0) < 1e-3


def test_descriptors_reject_missing_level():
    imgs = _blob_images(3, 2, 32)
    with pytest.raises(S.SwdError, match="level"):
        S.build_descriptors(imgs, 8, S.SwdConfig(), np.random.default_rng(0))


def test_descriptors_reject_oversized_patch():
    imgs = _blob_images(4, 2, 16)
    cfg = S.SwdConfig(patch_size=17)
    with pytest.raises(S.SwdError, match="patch"):
        S.build_descriptors(imgs, 16, cfg, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# sliced_w1


def test_identity_gives_exact_zero():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((40, 12))
    assert S.sliced_w1(a, a.copy(), n_projections=16, seed=0) == 0.0


def test_two_point_instance():
    a = np.array([[0.0], [1.0]])
    b = np.array([[1.0], [2.0]])
    assert S.sliced_w1(a, b, n_projections=8, seed=1) == pytest.approx(1.0, abs=1e-12)
    assert exhaustive_w1(a.ravel(), b.ravel()) == pytest.approx(1.0)


def test_sorted_matching_is_optimal_exhaustive():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        a = rng.standard_normal(n)
        b = rng.standard_normal(n)
        assert abs(sorted_w1(a, b) - exhaustive_w1(a, b)) < 1e-12


def test_symmetry_under_shared_seed():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((30, 5))
    b = rng.standard_normal((30, 5))
    ab = S.sliced_w1(a, b, n_projections=32, seed=9)
    ba = S.sliced_w1(b, a, n_projections=32, seed=9)
    assert ab == pytest.approx(ba, abs=1e-14)


def test_translation_shifts_w1_exactly():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((25, 1))
    b = a + rng.uniform(0.5, 1.5, size=a.shape)
    c = 0.7
    base = S.sliced_w1(a, b, n_projections=4, seed=2)
    shifted = S.sliced_w1(a, b + c, n_projections=4, seed=2)
    assert shifted - base == pytest.approx(c, abs=1e-12)


def test_subsampling_reconciles_sizes():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((10, 4))
    b = rng.standard_normal((6, 4))
    d = S.sliced_w1(a, b, n_projections=8, seed=3)
    assert np.isfinite(d) and d >= 0.0


def test_sliced_w1_validation():
    with pytest.raises(S.SwdError):
        S.sliced_w1(np.empty((0, 3)), np.empty((0, 3)), 4, seed=0)
    with pytest.raises(S.SwdError):
        S.sliced_w1(np.zeros((2, 3)), np.zeros((2, 4)), 4, seed=0)


# ---------------------------------------------------------------------------
# reports


FAST = S.SwdConfig(patches_per_image=16, n_projections=64, n_repeats=2, seed=0)


def test_report_self_is_zero_at_all_levels():
    imgs = _blob_images(10, 8, 32)
    rep = S.swd_report(imgs, imgs.copy(), FAST)
    assert sorted(rep.levels) == [16, 32]
    for v in rep.levels.values():
        assert v == 0.0
    assert rep.average == 0.0


def test_report_average_is_mean_of_levels():
    real = _blob_images(11, 8, 32)
    fake = _blob_images(12, 8, 32)
    rep = S.swd_report(real, fake, FAST)
    assert rep.average == pytest.approx(np.mean(list(rep.levels.values())))
    assert rep.scale == 1e3
    assert all(v >= 0.0 for v in rep.levels.values())


def test_report_deterministic():
    real = _blob_images(13, 6, 32)
    fake = _blob_images(14, 6, 32)
    r1 = S.swd_report(real, fake, FAST)
    r2 = S.swd_report(real, fake, FAST)
    assert r1.levels == r2.levels
    assert r1.to_json() == r2.to_json()


def test_report_rejects_resolution_mismatch():
    with pytest.raises(S.SwdError, match="mismatch"):
        S.swd_report(_blob_images(0, 2, 32), _blob_images(0, 2, 16), FAST)


def test_report_json_document():
    real = _blob_images(15, 4, 32)
    fake = _blob_images(16, 4, 32)
    doc = json.loads(S.swd_report(real, fake, FAST).to_json())
    assert set(doc) == {"levels", "average", "scale", "config"}
    assert set(doc["levels"]) == {"16", "32"}
    assert doc["scale"] == 1000.0
    assert doc["config"]["patch_size"] == 7


def test_report_orders_halves_below_noise():
    real_a = _blob_images(17, 32, 32)
    real_b = records_to_array(
        [r for r in synth_blob_dataset(17, 64, 32)[32:]])
    noise = np.random.default_rng(18).uniform(-1, 1, real_a.shape).astype(np.float32)
    d_halves = S.swd_report(real_a, real_b, FAST).average
    d_noise = S.swd_report(real_a, noise, FAST).average
    assert 0.0 < d_halves < d_noise
