"""Sliced Wasserstein Distance between two image sets.

Images are decomposed into Laplacian-pyramid bands down to a minimum level
(16 x 16 by default, using the low-pass base at the bottom). At each band a
fixed number of patch descriptors is sampled per image, normalized per
channel across the whole set, and compared by projecting onto random unit
directions: in 1-D the optimal transport cost is the mean absolute
difference of the sorted sequences. Per-level distances are averaged over
independent projection draws and reported scaled by 1e3.

Patch positions and projections are drawn from seeds shared by both sets,
so comparing a set against itself yields exactly zero at every level.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .zoo import laplacian_decompose


class SwdError(ValueError):
    pass


@dataclass
class SwdConfig:
    patch_size: int = 7
    patches_per_image: int = 64
    n_projections: int = 512
    n_repeats: int = 4
    min_level: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise SwdError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        for name in ("patches_per_image", "n_projections", "n_repeats", "min_level"):
            if getattr(self, name) < 1:
                raise SwdError(f"{name} must be >= 1, got {getattr(self, name)}")

    def pyramid_levels(self, resolution):
        return len(level_resolutions(resolution, self.min_level))


@dataclass
class DescriptorSet:
    level: int
    descriptors: np.ndarray  # (M, 3 * patch_size**2) float64


@dataclass
class SwdReport:
    levels: dict           # resolution -> distance, already scaled
    average: float
    scale: float
    config: SwdConfig = field(repr=False, default=None)

    def to_json(self):
        doc = {
            "levels": {str(k): self.levels[k] for k in sorted(self.levels)},
            "average": self.average,
            "scale": self.scale,
            "config": asdict(self.config) if self.config else {},
        }
        return json.dumps(doc, sort_keys=True)


def level_resolutions(resolution, min_level=16):
    """Band resolutions from finest to the low-pass floor."""
    if resolution < 1 or resolution & (resolution - 1):
        raise SwdError(f"resolution must be a power of two, got {resolution}")
    out = [resolution]
    while out[-1] > min_level:
        out.append(out[-1] // 2)
    return out


def _as_images(images):
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != x.shape[3]:
        raise SwdError(f"expected (N, 3, r, r) images, got shape {x.shape}")
    if x.shape[0] == 0:
        raise SwdError("empty image set")
    return x


def _bands(images, config):
    """Laplacian band per level resolution; low-pass base at the floor."""
    levels = level_resolutions(images.shape[2], config.min_level)
    with T.no_grad():
        residuals, base = laplacian_decompose(
            T.Tensor(images, dtype=np.float64), len(levels) - 1)
    bands = {res: residuals[i].data for i, res in enumerate(levels[:-1])}
    bands[levels[-1]] = base.data
    return bands


def build_descriptors(images, level, config, rng):
    """Sample patch descriptors from one pyramid band of an image set.

    Patch top-left positions come from the supplied rng, one independent
    draw per image; descriptors are flattened after per-channel
    standardization across the whole set.
    """
    images = _as_images(images)
    bands = _bands(images, config)
    if level not in bands:
        raise SwdError(f"level {level} not in pyramid {sorted(bands)}")
    band = bands[level]
    p = config.patch_size
    if p > level:
        raise SwdError(f"patch_size {p} exceeds level resolution {level}")
    n = band.shape[0]
    k = config.patches_per_image
    rows = rng.integers(0, level - p + 1, size=(n, k))
    cols = rng.integers(0, level - p + 1, size=(n, k))
    patches = np.empty((n * k, 3, p, p), dtype=np.float64)
    for i in range(n):
        for j in range(k):
            r0, c0 = rows[i, j], cols[i, j]
            patches[i * k + j] = band[i, :, r0:r0 + p, c0:c0 + p]
    mean = patches.mean(axis=(0, 2, 3), keepdims=True)
    std = patches.std(axis=(0, 2, 3), keepdims=True)
    std = np.where(std < 1e-12, 1.0, std)
    patches = (patches - mean) / std
    return DescriptorSet(level=level, descriptors=patches.reshape(n * k, -1))


def _seed_seq(seed, *tail):
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return base + list(tail)


def sliced_w1(a, b, n_projections, seed):
    """Mean 1-D Wasserstein-1 over random unit projection directions.

    Sorted pairing is the optimal matching in 1-D, so each direction
    contributes mean |a_(i) - b_(i)| over the order statistics. Unequal set
    sizes are reconciled by seeded subsampling of the larger set.
    """
    a = a.descriptors if isinstance(a, DescriptorSet) else np.asarray(a, np.float64)
    b = b.descriptors if isinstance(b, DescriptorSet) else np.asarray(b, np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise SwdError(f"descriptor shapes do not align: {a.shape} vs {b.shape}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise SwdError("empty descriptor set")
    if n_projections < 1:
        raise SwdError("n_projections must be >= 1")
    if a.shape[0] != b.shape[0]:
        m = min(a.shape[0], b.shape[0])
        sub = np.random.default_rng(_seed_seq(seed, 0))
        if a.shape[0] > m:
            a = a[np.sort(sub.choice(a.shape[0], size=m, replace=False))]
        else:
            b = b[np.sort(sub.choice(b.shape[0], size=m, replace=False))]
    rng = np.random.default_rng(_seed_seq(seed, 1))
    dirs = rng.standard_normal((n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(a @ dirs.T, axis=0)
    pb = np.sort(b @ dirs.T, axis=0)
    return float(np.mean(np.abs(pa - pb)))


def swd_report(real_images, fake_images, config=None):
    """Per-level SWD between two image sets, scaled by 1e3 for reporting."""
    config = config or SwdConfig()
    real = _as_images(real_images)
    fake = _as_images(fake_images)
    if real.shape[2] != fake.shape[2]:
        raise SwdError(f"resolution mismatch: {real.shape[2]} vs {fake.shape[2]}")
    scale = 1e3
    levels = {}
    for level in level_resolutions(real.shape[2], config.min_level):
        da = build_descriptors(real, level, config,
                               np.random.default_rng([config.seed, 5, level]))
        db = build_descriptors(fake, level, config,
                               np.random.default_rng([config.seed, 5, level]))
        reps = [sliced_w1(da, db, config.n_projections,
                          seed=[config.seed, 6, level, rep])
                for rep in range(config.n_repeats)]
        levels[level] = float(np.mean(reps)) * scale
    average = float(np.mean(list(levels.values())))
    return SwdReport(levels=levels, average=average, scale=scale, config=config)
