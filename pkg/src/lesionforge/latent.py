"""Latent sampling, interpolation walks, and image-grid export.

Latents are i.i.d. standard normal, deterministic per (seed, index). Walks
chain interpolation segments between seeded anchor vectors, either linear
or great-circle, and render them through a generator; grids tile a batch of
[-1, 1] images into one bordered PNG for side-by-side inspection. A nearest
training-neighbor helper supports the memorization spot check: smooth
transitions with positive distance to every training image argue against a
copied dataset.
"""

import io
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import denormalize
from .zoo import ProgressiveGenerator


class LatentError(ValueError):
    pass


@dataclass
class LatentVector:
    values: np.ndarray
    seed: int = None
    index: int = None

    @property
    def dim(self):
        return self.values.shape[0]


@dataclass
class WalkSpec:
    anchor_seeds: list
    steps: int = 8
    mode: str = "linear"

    def __post_init__(self):
        if len(self.anchor_seeds) < 2:
            raise LatentError("a walk needs at least 2 anchor seeds")
        if self.steps < 1:
            raise LatentError("steps must be >= 1")
        if self.mode not in ("linear", "spherical"):
            raise LatentError(f"unknown interpolation mode {self.mode!r}")

    def to_json(self):
        return {"anchor_seeds": list(self.anchor_seeds), "steps": self.steps,
                "mode": self.mode}

    @classmethod
    def from_json(cls, d):
        return cls(anchor_seeds=list(d["anchor_seeds"]),
                   steps=int(d.get("steps", 8)), mode=d.get("mode", "linear"))


def sample_latents(seed, n, dim):
    """n standard-normal vectors, each deterministic per (seed, index)."""
    if n < 1:
        raise LatentError("n must be >= 1")
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, 13, i])
        out.append(LatentVector(rng.standard_normal(dim).astype(np.float32),
                                seed=seed, index=i))
    return out


def _values(z):
    v = z.values if isinstance(z, LatentVector) else np.asarray(z)
    return v.astype(np.float32, copy=False)


def interpolate(z1, z2, steps, mode="linear"):
    """Path from z1 to z2 inclusive, shape (steps, dim).

    Linear takes convex combinations at t = k/(steps-1); spherical follows
    the great circle between the directions while interpolating the norms,
    so equal-norm endpoints keep their norm along the whole path.
    """
    a, b = _values(z1), _values(z2)
    if a.shape != b.shape:
        raise LatentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if steps < 2:
        raise LatentError("steps must be >= 2")
    ts = np.arange(steps, dtype=np.float64) / (steps - 1)
    if mode == "linear":
        path = (1.0 - ts)[:, None] * a[None, :].astype(np.float64) \
            + ts[:, None] * b[None, :].astype(np.float64)
        return path.astype(np.float32)
    if mode != "spherical":
        raise LatentError(f"unknown interpolation mode {mode!r}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise LatentError("spherical interpolation is undefined at the zero vector")
    ua, ub = a / na, b / nb
    cos = float(np.clip(np.dot(ua, ub), -1.0, 1.0))
    omega = np.arccos(cos)
    norms = (1.0 - ts) * na + ts * nb
    if omega < 1e-7:
        dirs = (1.0 - ts)[:, None] * ua[None, :] + ts[:, None] * ub[None, :]
    else:
        s = np.sin(omega)
        dirs = (np.sin((1.0 - ts) * omega) / s)[:, None] * ua[None, :] \
            + (np.sin(ts * omega) / s)[:, None] * ub[None, :]
    return (dirs * norms[:, None]).astype(np.float32)


def anchor_latents(walk, dim):
    return [sample_latents(s, 1, dim)[0] for s in walk.anchor_seeds]


def _generate(generator, latents):
    z = T.Tensor(np.asarray(latents, dtype=np.float32))
    with T.no_grad():
        if isinstance(generator, ProgressiveGenerator):
            return generator(z, 1.0).data
        return generator(z).data


def manifold_walk(generator, walk, dim):
    """Images along the interpolation path through the anchors, in order."""
    anchors = [a.values for a in anchor_latents(walk, dim)]
    if walk.steps == 1:
        path = np.stack(anchors)
    else:
        segments = [interpolate(anchors[i], anchors[i + 1], walk.steps, walk.mode)
                    for i in range(len(anchors) - 1)]
        parts = [segments[0]] + [s[1:] for s in segments[1:]]
        path = np.concatenate(parts, axis=0)
    return _generate(generator, path)


def render_grid(images, columns, cell_border=1, border_value=0):
    """Tile [-1, 1] images row-major into one bordered PNG, returned as bytes."""
    from PIL import Image

    x = np.asarray(images, dtype=np.float32)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[0] < 1:
        raise LatentError(f"expected (N, 3, r, r) images, got {x.shape}")
    if columns < 1:
        raise LatentError("columns must be >= 1")
    n, _, r, _ = x.shape
    rows = -(-n // columns)
    cell = r + 2 * cell_border
    canvas = np.full((rows * cell, columns * cell, 3), border_value, np.uint8)
    pixels = denormalize(x).transpose(0, 2, 3, 1)
    for k in range(n):
        gr, gc = divmod(k, columns)
        r0 = gr * cell + cell_border
        c0 = gc * cell + cell_border
        canvas[r0:r0 + r, c0:c0 + r] = pixels[k]
    buf = io.BytesIO()
    Image.fromarray(canvas).save(buf, format="PNG")
    return buf.getvalue()


def nearest_neighbor_distances(candidates, dataset, chunk=64):
    """Per-candidate minimum mean-absolute-difference to any training image."""
    c = np.asarray(candidates, dtype=np.float32).reshape(len(candidates), -1)
    d = np.asarray(dataset, dtype=np.float32).reshape(len(dataset), -1)
    out = np.empty(len(c), dtype=np.float64)
    for lo in range(0, len(c), chunk):
        block = c[lo:lo + chunk]
        diffs = np.abs(block[:, None, :] - d[None, :, :]).mean(axis=2)
        out[lo:lo + chunk] = diffs.min(axis=1)
    return out
