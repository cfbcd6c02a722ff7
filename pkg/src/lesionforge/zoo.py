"""Constructors and structural operations for the three architectures.

Covers the plain convolutional GAN, the pyramid of residual GANs built
on Laplacian decomposition, and the progressively grown GAN with fade-in
blending, plus the schedule type that drives growth during training.
"""

from __future__ import annotations

import numpy as np

from lesionforge import tensor as T
from lesionforge.layers import (Conv, Dense, Downsample2x, Flatten, LeakyRelu,
                                MinibatchStddev, NetworkGraph, PixelNorm,
                                Reshape, Tanh, Upsample2x)
from lesionforge.tensor import ShapeError, Tensor

LATENT_DIM = 128


def is_power_of_two(n):
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def channel_width(res, base_channels, floor=8):
    """Feature width at a resolution: halves per doubling above 4, floored
    and capped at base_channels."""
    if not is_power_of_two(res) or res < 4:
        raise ValueError(f"bad resolution {res}")
    w = base_channels // (res // 4)
    return min(base_channels, max(floor, w))


# --- plain convolutional GAN ------------------------------------------------

def _generator_layers(prefix, latent_dim, target_res, base_channels, rng, equalized=False):
    w = channel_width(4, base_channels)
    layers = [Dense(f"{prefix}.4.dense", latent_dim, w * 16, rng, equalized=equalized),
              Reshape((w, 4, 4)), LeakyRelu()]
    res, prev = 4, w
    while res < target_res:
        res *= 2
        w = channel_width(res, base_channels)
        layers += [Upsample2x(),
                   Conv(f"{prefix}.{res}.conv", prev, w, 3, rng, pad=1, equalized=equalized),
                   LeakyRelu()]
        prev = w
    layers += [Conv(f"{prefix}.out", prev, 3, 3, rng, pad=1, equalized=equalized), Tanh()]
    return layers


def _discriminator_layers(prefix, in_channels, input_res, base_channels, rng, equalized=False):
    w = channel_width(input_res, base_channels)
    layers = [Conv(f"{prefix}.{input_res}.stem", in_channels, w, 3, rng, pad=1,
                   equalized=equalized), LeakyRelu()]
    res, prev = input_res, w
    while res > 4:
        res //= 2
        w = channel_width(res, base_channels)
        layers += [Conv(f"{prefix}.{res}.conv", prev, w, 3, rng, stride=2, pad=1,
                        equalized=equalized), LeakyRelu()]
        prev = w
    layers += [Flatten(), Dense(f"{prefix}.out", prev * 16, 1, rng, equalized=equalized)]
    return layers


def build_dcgan(latent_dim=LATENT_DIM, target_res=32, base_channels=64, seed=0):
    """Noise-to-image GAN: dense stem then (upsample, conv, leaky) blocks;
    the discriminator mirrors it with strided convs down to one logit."""
    if not is_power_of_two(target_res) or target_res < 8:
        raise ValueError(f"target_res must be a power of two >= 8, got {target_res}")
    if latent_dim < 1:
        raise ValueError("latent_dim must be positive")
    g_rng = np.random.default_rng([seed, 0])
    d_rng = np.random.default_rng([seed, 1])
    gen = NetworkGraph(_generator_layers("g", latent_dim, target_res, base_channels, g_rng),
                       (latent_dim,), role="generator")
    disc = NetworkGraph(_discriminator_layers("d", 3, target_res, base_channels, d_rng),
                        (3, target_res, target_res), role="discriminator")
    return gen, disc


# --- Laplacian pyramid ------------------------------------------------------

def laplacian_decompose(image, levels):
    """Split an image into per-level detail residuals plus a coarse base.

    residual_i = current - upsample(downsample(current)), finest first.
    """
    img = image if isinstance(image, Tensor) else Tensor(image)
    if img.ndim != 4:
        raise ShapeError(f"expected N,C,H,W image, got {img.shape}")
    if levels < 0:
        raise ValueError("levels must be >= 0")
    H, W = img.shape[2], img.shape[3]
    if H % (1 << levels) or W % (1 << levels):
        raise ShapeError(f"extents {H}x{W} not divisible by 2^{levels}")
    residuals = []
    current = img
    for _ in range(levels):
        down = T.downsample2x_avg(current)
        residuals.append(current - T.upsample2x_nearest(down))
        current = down
    return residuals, current


def laplacian_reconstruct(residuals, base):
    """Exact inverse of laplacian_decompose."""
    img = base if isinstance(base, Tensor) else Tensor(base)
    for r in reversed(residuals):
        up = T.upsample2x_nearest(img)
        r = r if isinstance(r, Tensor) else Tensor(r)
        if up.shape != r.shape:
            raise ShapeError(f"residual shape {r.shape} does not chain with {up.shape}")
        img = up + r
    return img


class PyramidLevelModel:
    """One level of the pyramid: a (possibly conditional) generator for the
    detail residual at this resolution plus its discriminator."""

    def __init__(self, level, resolution, generator, discriminator):
        self.level = level
        self.resolution = resolution
        self.generator = generator
        self.discriminator = discriminator

    def params(self):
        return self.generator.params() + self.discriminator.params()

    def __repr__(self):
        return f"PyramidLevelModel(level={self.level}, res={self.resolution})"


def build_lapgan(levels, latent_dim=LATENT_DIM, base_res=8, base_channels=64,
                 seed=0, embed_channels=8):
    """Hierarchy of GANs: level 0 generates a coarse image from noise; each
    higher level generates the detail residual at doubled resolution,
    conditioned on the upsampled lower-resolution image."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if not is_power_of_two(base_res) or base_res < 8:
        raise ValueError(f"base_res must be a power of two >= 8, got {base_res}")
    models = []
    for i in range(levels):
        res = base_res * (1 << i)
        g_rng = np.random.default_rng([seed, 2, i, 0])
        d_rng = np.random.default_rng([seed, 2, i, 1])
        if i == 0:
            gen = NetworkGraph(
                _generator_layers(f"lap0.g", latent_dim, res, base_channels, g_rng),
                (latent_dim,), role="generator")
            disc = NetworkGraph(
                _discriminator_layers(f"lap0.d", 3, res, base_channels, d_rng),
                (3, res, res), role="discriminator")
        else:
            w = channel_width(res, base_channels)
            z_layers = [Dense(f"lap{i}.g.embed", latent_dim, embed_channels, g_rng),
                        LeakyRelu()]
            main = [Conv(f"lap{i}.g.conv0", 3 + embed_channels, w, 3, g_rng, pad=1),
                    LeakyRelu(),
                    Conv(f"lap{i}.g.conv1", w, w, 3, g_rng, pad=1), LeakyRelu(),
                    Conv(f"lap{i}.g.out", w, 3, 3, g_rng, pad=1), Tanh()]
            gen = NetworkGraph(main, (3, res, res), role="generator",
                               z_layers=z_layers, z_dim=latent_dim)
            # conditioned on the upsampled image: residual and condition stacked
            disc = NetworkGraph(
                _discriminator_layers(f"lap{i}.d", 6, res, base_channels, d_rng),
                (6, res, res), role="discriminator")
        models.append(PyramidLevelModel(i, res, gen, disc))
    return models


def lapgan_sample(models, z_list):
    """Coarse-to-fine sampling: image = upsample(previous) + residual."""
    if len(z_list) != len(models):
        raise ValueError(f"need one latent per level: {len(z_list)} != {len(models)}")
    with T.no_grad():
        img = models[0].generator(z_list[0])
        for m, z in zip(models[1:], z_list[1:]):
            up = T.upsample2x_nearest(img)
            img = up + m.generator(up, z)
    return img


# --- progressive growth -----------------------------------------------------

class ProgressiveSchedule:
    """Ordered training stages: (resolution, phase, duration).

    The first stage stabilizes at the base resolution; every later
    resolution is introduced by exactly one fade stage and resolutions
    double monotonically up to the target.
    """

    PHASES = ("stabilize", "fade")

    def __init__(self, stages, base_resolution, target_resolution):
        self.stages = [(int(r), str(p), int(d)) for r, p, d in stages]
        self.base_resolution = int(base_resolution)
        self.target_resolution = int(target_resolution)
        self._validate()
        self._starts = np.concatenate([[0], np.cumsum([d for _, _, d in self.stages])])

    def _validate(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        for r, p, d in self.stages:
            if not is_power_of_two(r) or r < 4:
                raise ValueError(f"bad stage resolution {r}")
            if p not in self.PHASES:
                raise ValueError(f"bad phase {p!r}")
            if d < 1:
                raise ValueError(f"stage duration must be >= 1, got {d}")
        if not is_power_of_two(self.base_resolution) or self.base_resolution < 4:
            raise ValueError(f"bad base resolution {self.base_resolution}")
        if self.stages[0][:2] != (self.base_resolution, "stabilize"):
            raise ValueError("first stage must stabilize at the base resolution")
        current = self.base_resolution
        for r, p, _ in self.stages[1:]:
            if r == current:
                if p == "fade":
                    raise ValueError(f"resolution {r} faded twice")
            elif r == 2 * current and p == "fade":
                current = r
            else:
                raise ValueError(f"stage {r}/{p} breaks the doubling pattern at {current}")
        if current != self.target_resolution:
            raise ValueError(f"schedule tops out at {current}, target is {self.target_resolution}")

    @classmethod
    def ramp(cls, base_resolution, target_resolution, stabilize_iters, fade_iters):
        """Stabilize at base, then alternate fade/stabilize per doubling."""
        stages = [(base_resolution, "stabilize", stabilize_iters)]
        res = base_resolution
        while res < target_resolution:
            res *= 2
            stages += [(res, "fade", fade_iters), (res, "stabilize", stabilize_iters)]
        return cls(stages, base_resolution, target_resolution)

    @property
    def total_iterations(self):
        return int(self._starts[-1])

    def resolutions(self):
        out = [self.base_resolution]
        while out[-1] < self.target_resolution:
            out.append(out[-1] * 2)
        return out

    def stage_at(self, iteration):
        if not (0 <= iteration < self.total_iterations):
            raise ValueError(f"iteration {iteration} outside schedule "
                             f"[0, {self.total_iterations})")
        idx = int(np.searchsorted(self._starts, iteration, side="right")) - 1
        return idx, self.stages[idx], iteration - int(self._starts[idx])

    def resolution_at(self, iteration):
        return self.stage_at(iteration)[1][0]

    def to_json(self):
        return {"stages": [list(s) for s in self.stages],
                "base_resolution": self.base_resolution,
                "target_resolution": self.target_resolution}

    @classmethod
    def from_json(cls, d):
        return cls([tuple(s) for s in d["stages"]], d["base_resolution"],
                   d["target_resolution"])

    def __eq__(self, other):
        return isinstance(other, ProgressiveSchedule) and self.to_json() == other.to_json()


def alpha_at(schedule, global_iteration):
    """Blend coefficient at an iteration: 1 while stabilizing, linear 0 to 1
    across each fade stage."""
    _, (_, phase, duration), offset = schedule.stage_at(global_iteration)
    if phase == "stabilize":
        return 1.0
    return offset / duration


def fade_blend(coarse_rgb, fine_rgb, alpha):
    """(1-alpha) * coarse + alpha * fine; both paths stay differentiable."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    coarse = coarse_rgb if isinstance(coarse_rgb, Tensor) else Tensor(coarse_rgb)
    fine = fine_rgb if isinstance(fine_rgb, Tensor) else Tensor(fine_rgb)
    if coarse.shape != fine.shape:
        raise ShapeError(f"blend shapes differ: {coarse.shape} vs {fine.shape}")
    return T.add(T.mul(coarse, 1.0 - float(alpha)), T.mul(fine, float(alpha)))


def _run(layers, x):
    for lay in layers:
        x = lay.forward(x)
    return x


class ProgressiveGenerator:
    """Growable generator: per-resolution blocks plus per-resolution RGB
    heads; the newest head fades in against the upsampled previous head."""

    def __init__(self, schedule, latent_dim=LATENT_DIM, base_channels=64, seed=0):
        self.schedule = schedule
        self.latent_dim = int(latent_dim)
        self.base_channels = int(base_channels)
        self.seed = int(seed)
        base = schedule.base_resolution
        self.current_res = base
        rng = np.random.default_rng([self.seed, base, 0])
        w = channel_width(base, base_channels)
        self.blocks = {base: [
            Dense(f"g.{base}.dense", latent_dim, w * base * base, rng, equalized=True),
            Reshape((w, base, base)), LeakyRelu(), PixelNorm(),
            Conv(f"g.{base}.conv", w, w, 3, rng, pad=1, equalized=True),
            LeakyRelu(), PixelNorm()]}
        self.torgb = {base: Conv(f"g.torgb{base}", w, 3, 1, rng, equalized=True)}

    def params(self):
        out = []
        for res in sorted(self.blocks):
            for lay in self.blocks[res]:
                out.extend(lay.params())
            out.extend(self.torgb[res].params())
        return out

    def active_params(self, fading=False):
        """Parameters on the current forward path (stale RGB heads excluded)."""
        out = []
        for res in sorted(self.blocks):
            for lay in self.blocks[res]:
                out.extend(lay.params())
        out.extend(self.torgb[self.current_res].params())
        if fading and self.current_res > self.schedule.base_resolution:
            out.extend(self.torgb[self.current_res // 2].params())
        return out

    def forward(self, z, alpha=1.0):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {alpha}")
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"latent must be N x {self.latent_dim}, got {z.shape}")
        base = self.schedule.base_resolution
        feats = {}
        x = _run(self.blocks[base], z)
        feats[base] = x
        res = base
        while res < self.current_res:
            res *= 2
            x = _run(self.blocks[res], x)
            feats[res] = x
        rgb = self.torgb[self.current_res].forward(feats[self.current_res])
        if alpha < 1.0 and self.current_res > base:
            prev = self.current_res // 2
            coarse = T.upsample2x_nearest(self.torgb[prev].forward(feats[prev]))
            rgb = fade_blend(coarse, rgb, alpha)
        return T.tanh_act(rgb)

    __call__ = forward

    def grown(self, next_res):
        _check_growth(self, next_res)
        g = object.__new__(ProgressiveGenerator)
        g.schedule, g.latent_dim = self.schedule, self.latent_dim
        g.base_channels, g.seed = self.base_channels, self.seed
        g.blocks = dict(self.blocks)
        g.torgb = dict(self.torgb)
        g.current_res = next_res
        rng = np.random.default_rng([self.seed, next_res, 0])
        prev_w = channel_width(next_res // 2, self.base_channels)
        w = channel_width(next_res, self.base_channels)
        g.blocks[next_res] = [
            Upsample2x(),
            Conv(f"g.{next_res}.conv0", prev_w, w, 3, rng, pad=1, equalized=True),
            LeakyRelu(), PixelNorm(),
            Conv(f"g.{next_res}.conv1", w, w, 3, rng, pad=1, equalized=True),
            LeakyRelu(), PixelNorm()]
        g.torgb[next_res] = Conv(f"g.torgb{next_res}", w, 3, 1, rng, equalized=True)
        return g

    def arch(self):
        return {"latent_dim": self.latent_dim, "base_channels": self.base_channels,
                "seed": self.seed, "current_res": self.current_res,
                "schedule": self.schedule.to_json()}


class ProgressiveDiscriminator:
    """Growable discriminator: per-resolution RGB stems and blocks mirroring
    the generator, with the batch-diversity channel before the final block."""

    def __init__(self, schedule, base_channels=64, seed=0):
        self.schedule = schedule
        self.base_channels = int(base_channels)
        self.seed = int(seed)
        base = schedule.base_resolution
        self.current_res = base
        rng = np.random.default_rng([self.seed, base, 1])
        w = channel_width(base, base_channels)
        self.fromrgb = {base: Conv(f"d.fromrgb{base}", 3, w, 1, rng, equalized=True)}
        self.blocks = {base: [
            MinibatchStddev(),
            Conv(f"d.{base}.conv", w + 1, w, 3, rng, pad=1, equalized=True),
            LeakyRelu(), Flatten(),
            Dense(f"d.{base}.dense", w * base * base, w, rng, equalized=True),
            LeakyRelu(),
            Dense(f"d.{base}.out", w, 1, rng, equalized=True)]}

    def params(self):
        out = []
        for res in sorted(self.blocks, reverse=True):
            out.extend(self.fromrgb[res].params())
            for lay in self.blocks[res]:
                out.extend(lay.params())
        return out

    def active_params(self, fading=False):
        out = []
        out.extend(self.fromrgb[self.current_res].params())
        if fading and self.current_res > self.schedule.base_resolution:
            out.extend(self.fromrgb[self.current_res // 2].params())
        for res in sorted(self.blocks, reverse=True):
            if res <= self.current_res:
                for lay in self.blocks[res]:
                    out.extend(lay.params())
        return out

    def forward(self, img, alpha=1.0):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {alpha}")
        R = self.current_res
        if img.ndim != 4 or tuple(img.shape[1:]) != (3, R, R):
            raise ShapeError(f"discriminator expects N,3,{R},{R}, got {img.shape}")
        base = self.schedule.base_resolution
        x = T.leaky_relu(self.fromrgb[R].forward(img))
        if R > base:
            x = _run(self.blocks[R], x)
            if alpha < 1.0:
                coarse = T.leaky_relu(
                    self.fromrgb[R // 2].forward(T.downsample2x_avg(img)))
                x = fade_blend(coarse, x, alpha)
            res = R // 2
            while res > base:
                x = _run(self.blocks[res], x)
                res //= 2
        return _run(self.blocks[base], x)

    __call__ = forward

    def grown(self, next_res):
        _check_growth(self, next_res)
        d = object.__new__(ProgressiveDiscriminator)
        d.schedule, d.base_channels, d.seed = self.schedule, self.base_channels, self.seed
        d.fromrgb = dict(self.fromrgb)
        d.blocks = dict(self.blocks)
        d.current_res = next_res
        rng = np.random.default_rng([self.seed, next_res, 1])
        prev_w = channel_width(next_res // 2, self.base_channels)
        w = channel_width(next_res, self.base_channels)
        d.fromrgb[next_res] = Conv(f"d.fromrgb{next_res}", 3, w, 1, rng, equalized=True)
        d.blocks[next_res] = [
            Conv(f"d.{next_res}.conv0", w, w, 3, rng, pad=1, equalized=True),
            LeakyRelu(),
            Conv(f"d.{next_res}.conv1", w, prev_w, 3, rng, pad=1, equalized=True),
            LeakyRelu(), Downsample2x()]
        return d

    def arch(self):
        return {"base_channels": self.base_channels, "seed": self.seed,
                "current_res": self.current_res, "schedule": self.schedule.to_json()}


def _check_growth(model, next_res):
    if next_res != 2 * model.current_res:
        raise ValueError(f"can only grow {model.current_res} -> "
                         f"{2 * model.current_res}, asked for {next_res}")
    if next_res > model.schedule.target_resolution:
        raise ValueError(f"{next_res} exceeds schedule target "
                         f"{model.schedule.target_resolution}")


def build_progressive(schedule, latent_dim=LATENT_DIM, base_channels=64, seed=0):
    """Generator/discriminator pair at the schedule's base resolution."""
    gen = ProgressiveGenerator(schedule, latent_dim=latent_dim,
                               base_channels=base_channels, seed=seed)
    disc = ProgressiveDiscriminator(schedule, base_channels=base_channels, seed=seed)
    return gen, disc


def grow(model_pair, next_resolution):
    """Double both networks' working resolution; existing parameter tensors
    are carried over untouched and old RGB heads are kept for blending."""
    gen, disc = model_pair
    if gen.current_res != disc.current_res:
        raise ValueError("generator and discriminator are at different resolutions")
    return gen.grown(next_resolution), disc.grown(next_resolution)
