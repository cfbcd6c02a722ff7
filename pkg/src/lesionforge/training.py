"""Adversarial training: alternating D/G updates with stage orchestration.

One train_step does one discriminator update on (real batch, fresh fakes)
followed by one generator update on fresh fakes; the network not being
updated keeps bit-identical parameters during the other's step. run_training
drives the per-architecture loop: fixed-resolution for plain GANs, coarse
to fine per pyramid level for the Laplacian hierarchy, and staged growth
with fade-in blending for the progressive pair. Everything downstream of
(seed, config, dataset) is deterministic; persisted logs carry no wallclock
so reruns are byte-identical.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from . import zoo
from .checkpoint import (load_checkpoint, model_params, models_arch,
                         restore_models, save_checkpoint)
from .data import BatchSampler
from .optim import Adam
from .swd import SwdConfig, swd_report


class TrainError(ValueError):
    pass


# lr, beta1, beta2 per architecture
OPT_DEFAULTS = {
    "dcgan": (2e-4, 0.5, 0.999),
    "lapgan": (2e-4, 0.5, 0.999),
    "pgan": (1e-3, 0.0, 0.99),
}


@dataclass
class TrainConfig:
    architecture: str
    total_iterations: int
    latent_dim: int = 128
    minibatch: object = 8           # fixed int or {resolution: int}
    seed: int = 0
    schedule: object = None         # ProgressiveSchedule, pgan only
    checkpoint_every: int = 0       # 0 = final checkpoint only
    swd_eval_every: int = 0         # 0 = no periodic SWD evaluation
    target_resolution: int = 32     # dcgan; lapgan/pgan derive their own
    base_channels: int = 64
    levels: int = 2                 # lapgan pyramid depth
    base_res: int = 8               # lapgan coarsest resolution
    embed_channels: int = 8
    lr: float = None                # None = architecture default
    beta1: float = None
    beta2: float = None
    saturating_g: bool = False
    swd_eval_samples: int = 64
    out_dir: str = None

    def __post_init__(self):
        if self.architecture not in OPT_DEFAULTS:
            raise TrainError(f"unknown architecture {self.architecture!r}")
        if self.total_iterations < 1:
            raise TrainError("total_iterations must be >= 1")
        if self.architecture == "pgan":
            if self.schedule is None:
                raise TrainError("pgan training requires a schedule")
            if self.total_iterations < self.schedule.total_iterations:
                raise TrainError(
                    f"total_iterations {self.total_iterations} is below the "
                    f"schedule's {self.schedule.total_iterations}")
            if isinstance(self.minibatch, dict):
                missing = [r for r in self.schedule.resolutions()
                           if r not in self.minibatch]
                if missing:
                    raise TrainError(f"minibatch map misses resolutions {missing}")
        elif self.schedule is not None:
            raise TrainError("schedule is only meaningful for pgan")
        if self.architecture == "lapgan" and self.levels < 1:
            raise TrainError("lapgan needs at least one level")

    def minibatch_for(self, resolution):
        if isinstance(self.minibatch, dict):
            try:
                return int(self.minibatch[resolution])
            except KeyError:
                raise TrainError(f"no minibatch size for resolution {resolution}")
        return int(self.minibatch)

    def resolved_optim(self):
        lr, b1, b2 = OPT_DEFAULTS[self.architecture]
        return (self.lr if self.lr is not None else lr,
                self.beta1 if self.beta1 is not None else b1,
                self.beta2 if self.beta2 is not None else b2)

    def data_resolution(self):
        if self.architecture == "pgan":
            return self.schedule.target_resolution
        if self.architecture == "lapgan":
            return self.base_res * (1 << (self.levels - 1))
        return self.target_resolution


@dataclass
class TrainLogRecord:
    iteration: int
    resolution: int
    alpha: float
    d_loss: float
    g_loss: float
    d_real_mean: float
    d_fake_mean: float
    wallclock_ms: float = field(compare=False)

    def to_json(self):
        # wallclock stays in memory only, so log files are byte-reproducible
        doc = {"iteration": self.iteration, "resolution": self.resolution,
               "alpha": self.alpha, "d_loss": self.d_loss, "g_loss": self.g_loss,
               "d_real_mean": self.d_real_mean, "d_fake_mean": self.d_fake_mean}
        return json.dumps(doc, sort_keys=True)


# ---------------------------------------------------------------------------
# losses


def _check_finite(logits, who):
    if not np.all(np.isfinite(logits.data)):
        raise TrainError(f"non-finite {who} logits")


def d_loss(d_real_logits, d_fake_logits):
    """-mean(log sigmoid(real)) - mean(log(1 - sigmoid(fake))), stable form."""
    _check_finite(d_real_logits, "real")
    _check_finite(d_fake_logits, "fake")
    real_term = T.tmean(T.softplus(T.mul(d_real_logits, -1.0)))
    fake_term = T.tmean(T.softplus(d_fake_logits))
    return T.add(real_term, fake_term)


def g_loss(d_fake_logits, saturating=False):
    """Non-saturating -mean(log sigmoid(fake)); optionally the literal
    minimax term mean(log(1 - sigmoid(fake)))."""
    _check_finite(d_fake_logits, "fake")
    if saturating:
        return T.mul(T.tmean(T.softplus(d_fake_logits)), -1.0)
    return T.tmean(T.softplus(T.mul(d_fake_logits, -1.0)))


# ---------------------------------------------------------------------------
# per-architecture adapters


class PairState:
    """A plain generator/discriminator pair, optionally progressive."""

    def __init__(self, generator, discriminator, latent_dim,
                 resolution, progressive=False):
        self.generator = generator
        self.discriminator = discriminator
        self.latent_dim = latent_dim
        self.resolution = resolution
        self.alpha = 1.0
        self.progressive = progressive
        self.g_opt = None
        self.d_opt = None
        self.iteration = 0

    def sample_latents(self, rng, n):
        return rng.standard_normal((n, self.latent_dim)).astype(np.float32)

    def gen_fake(self, z, batch):
        zt = T.Tensor(z)
        if self.progressive:
            return self.generator(zt, self.alpha)
        return self.generator(zt)

    def disc_real(self, batch):
        xt = T.Tensor(np.asarray(batch, dtype=np.float32))
        if self.progressive:
            return self.discriminator(xt, self.alpha)
        return self.discriminator(xt)

    def disc_fake(self, fake, batch):
        if self.progressive:
            return self.discriminator(fake, self.alpha)
        return self.discriminator(fake)


class LapganLevelState:
    """One pyramid level: plain GAN at the base, conditional above it.

    Batches are dicts {"real": residual or base images, "cond": upsampled
    coarse image or None}; the discriminator sees residual and condition
    stacked along channels.
    """

    def __init__(self, model, latent_dim):
        self.model = model
        self.latent_dim = latent_dim
        self.resolution = model.resolution
        self.alpha = 1.0
        self.g_opt = None
        self.d_opt = None
        self.iteration = 0

    def sample_latents(self, rng, n):
        return rng.standard_normal((n, self.latent_dim)).astype(np.float32)

    def _cond(self, batch):
        cond = batch.get("cond")
        return None if cond is None else T.Tensor(np.asarray(cond, np.float32))

    def gen_fake(self, z, batch):
        zt = T.Tensor(z)
        cond = self._cond(batch)
        if cond is None:
            return self.model.generator(zt)
        return self.model.generator(cond, zt)

    def disc_real(self, batch):
        xt = T.Tensor(np.asarray(batch["real"], np.float32))
        cond = self._cond(batch)
        if cond is not None:
            xt = T.concat_channels([xt, cond])
        return self.model.discriminator(xt)

    def disc_fake(self, fake, batch):
        cond = self._cond(batch)
        if cond is not None:
            fake = T.concat_channels([fake, cond])
        return self.model.discriminator(fake)


def train_step(state, batch, config, rng):
    """One alternating update; returns the per-iteration log record."""
    t0 = time.perf_counter()
    n = (batch["real"] if isinstance(batch, dict) else batch).shape[0]

    with T.no_grad():
        fake_for_d = state.gen_fake(state.sample_latents(rng, n), batch)
    real_logits = state.disc_real(batch)
    fake_logits = state.disc_fake(fake_for_d, batch)
    dl = d_loss(real_logits, fake_logits)
    state.d_opt.zero_grad()
    dl.backward()
    state.d_opt.step()

    fake_for_g = state.gen_fake(state.sample_latents(rng, n), batch)
    gen_logits = state.disc_fake(fake_for_g, batch)
    gl = g_loss(gen_logits, saturating=config.saturating_g)
    state.g_opt.zero_grad()
    gl.backward()
    state.g_opt.step()

    record = TrainLogRecord(
        iteration=int(state.iteration),
        resolution=int(state.resolution),
        alpha=float(state.alpha),
        d_loss=float(dl.data),
        g_loss=float(gl.data),
        d_real_mean=float(T.sigmoid_values(real_logits).mean()),
        d_fake_mean=float(T.sigmoid_values(fake_logits).mean()),
        wallclock_ms=(time.perf_counter() - t0) * 1e3,
    )
    state.iteration += 1
    return record


# ---------------------------------------------------------------------------
# dataset plumbing


def _downscale_set(images, resolution):
    """Repeated 2x2 block averaging of an (N, 3, H, W) stack."""
    x = np.asarray(images, dtype=np.float32)
    while x.shape[2] > resolution:
        n, c, h, w = x.shape
        x = x.reshape(n, c, h // 2, 2, w // 2, 2).mean(
            axis=(3, 5), dtype=np.float64).astype(np.float32)
    return x


def _upsample_set(images):
    return np.repeat(np.repeat(images, 2, axis=2), 2, axis=3)


def as_image_array(dataset, expected_resolution):
    """Accept a stacked array or ImageRecord list; verify the resolution."""
    if isinstance(dataset, np.ndarray):
        x = dataset.astype(np.float32, copy=False)
        if x.ndim != 4 or x.shape[1] != 3:
            raise TrainError(f"expected (N, 3, r, r) images, got {x.shape}")
        if x.shape[2] != expected_resolution or x.shape[3] != expected_resolution:
            raise TrainError(f"dataset is {x.shape[2]}x{x.shape[3]}, "
                             f"training wants {expected_resolution}")
        if x.shape[0] == 0:
            raise TrainError("empty dataset")
        return x
    records = list(dataset)
    if not records:
        raise TrainError("empty dataset")
    for r in records:
        if r.resolution != expected_resolution:
            raise TrainError(f"image {r.source_id} is {r.resolution}px, "
                             f"training wants {expected_resolution}")
    return np.stack([r.pixels for r in records]).astype(np.float32)


# ---------------------------------------------------------------------------
# run orchestration


def _load_adam(opt, saved):
    opt.load_state_scalars(saved["scalars"])
    if set(saved["m"]) != set(opt.m) or set(saved["v"]) != set(opt.v):
        raise TrainError("optimizer state does not match the parameter set")
    for name in opt.m:
        opt.m[name] = saved["m"][name].copy()
        opt.v[name] = saved["v"][name].copy()


def _fresh_adam(params, config):
    lr, b1, b2 = config.resolved_optim()
    return Adam(params, lr=lr, beta1=b1, beta2=b2)


def _pgan_stage(schedule, iteration):
    """(stage index, resolution, phase, alpha); past the schedule's end the
    run stays at the final resolution with alpha 1."""
    if iteration >= schedule.total_iterations:
        return len(schedule.stages), schedule.target_resolution, "stabilize", 1.0
    idx, (res, phase, _), _ = schedule.stage_at(iteration)
    return idx, res, phase, zoo.alpha_at(schedule, iteration)


def _lapgan_level(config, iteration):
    per = max(1, config.total_iterations // config.levels)
    return min(iteration // per, config.levels - 1)


def _eval_swd_config(resolution, seed):
    patch = min(7, resolution if resolution % 2 else resolution - 1)
    return SwdConfig(patch_size=patch, patches_per_image=16, n_projections=64,
                     n_repeats=2, min_level=min(16, resolution), seed=seed)


class _Run:
    """Shared bookkeeping for a training run rooted at config.out_dir."""

    def __init__(self, config):
        if config.out_dir is None:
            raise TrainError("run_training needs config.out_dir")
        self.config = config
        self.out = Path(config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.train_log = open(self.out / "train_log.jsonl", "a")
        self.events = open(self.out / "events.jsonl", "a")
        self.swd_log = open(self.out / "swd_log.jsonl", "a")
        self.records = []
        self.checkpoints = []
        self.samplers = {}

    def close(self):
        for f in (self.train_log, self.events, self.swd_log):
            f.close()

    def log(self, record):
        self.records.append(record)
        self.train_log.write(record.to_json() + "\n")

    def event(self, iteration, kind, **extra):
        doc = {"iteration": iteration, "event": kind, **extra}
        self.events.write(json.dumps(doc, sort_keys=True) + "\n")

    def batch_indices(self, n_items, batch_size):
        if batch_size not in self.samplers:
            self.samplers[batch_size] = BatchSampler(
                n_items, batch_size, self.config.seed)
        return self.samplers[batch_size].next_indices()

    def skip_batches(self, n_items, counts):
        for bs, k in counts.items():
            self.samplers[bs] = BatchSampler(n_items, bs, self.config.seed,
                                             start_batch=k)

    def eval_swd(self, iteration, resolution, fakes, reals):
        n = min(self.config.swd_eval_samples, len(reals), len(fakes))
        pick = np.random.default_rng([self.config.seed, 12, iteration])
        real_sub = reals[np.sort(pick.choice(len(reals), n, replace=False))]
        rep = swd_report(real_sub, fakes[:n],
                         _eval_swd_config(resolution, self.config.seed))
        doc = {"iteration": iteration, "resolution": resolution,
               "levels": {str(k): v for k, v in sorted(rep.levels.items())},
               "average": rep.average}
        self.swd_log.write(json.dumps(doc, sort_keys=True) + "\n")
        return rep.average

    def save(self, iteration, kind, models, arch_kwargs, optim_roles):
        arch = models_arch(kind, **arch_kwargs)
        params = {k: p.data for k, p in model_params(kind, models).items()}
        optim = {role: {"scalars": opt.state_scalars(), "m": opt.m, "v": opt.v}
                 for role, opt in optim_roles.items()}
        path = self.out / f"ckpt_{iteration:06d}.lfck"
        save_checkpoint(path, arch, params, optim, iteration)
        self.checkpoints.append(str(path))
        self.event(iteration, "checkpoint", path=path.name)
        return path


def sample_fakes(kind, models, n, seed, latent_dim, alpha=1.0, up_to_level=None):
    """Seeded generator sampling, shared by SWD evaluation and exports."""
    rng = np.random.default_rng(list(seed) if isinstance(seed, (list, tuple))
                                else [int(seed)])
    with T.no_grad():
        if kind == "dcgan":
            gen, _ = models
            z = rng.standard_normal((n, latent_dim)).astype(np.float32)
            return gen(T.Tensor(z)).data
        if kind == "pgan":
            gen, _ = models
            z = rng.standard_normal((n, latent_dim)).astype(np.float32)
            return gen(T.Tensor(z), alpha).data
        if kind == "lapgan":
            active = models if up_to_level is None else models[:up_to_level + 1]
            zs = [T.Tensor(rng.standard_normal((n, latent_dim)).astype(np.float32))
                  for _ in active]
            return zoo.lapgan_sample(active, zs).data
    raise TrainError(f"unknown architecture kind {kind!r}")


def _run_pair(run, config, dataset, models, optim_state, start_iter):
    """dcgan and pgan share the fixed-pair loop; pgan adds staging."""
    kind = config.architecture
    gen, disc = models
    progressive = kind == "pgan"
    reals = {}
    if progressive:
        for res in config.schedule.resolutions():
            reals[res] = _downscale_set(dataset, res)
    else:
        reals[config.target_resolution] = dataset

    state = PairState(gen, disc, config.latent_dim,
                      gen.current_res if progressive else config.target_resolution,
                      progressive=progressive)
    state.iteration = start_iter

    def active(fading):
        if progressive:
            return gen.active_params(fading), disc.active_params(fading)
        return gen.params(), disc.params()

    if progressive:
        stage_idx, res, phase, _ = _pgan_stage(
            config.schedule, max(start_iter - 1, 0))
        g_params, d_params = active(phase == "fade")
    else:
        stage_idx, res, phase = None, config.target_resolution, None
        g_params, d_params = active(False)
    state.g_opt = _fresh_adam(g_params, config)
    state.d_opt = _fresh_adam(d_params, config)
    if optim_state is not None:
        _load_adam(state.g_opt, optim_state["generator"])
        _load_adam(state.d_opt, optim_state["discriminator"])

    arch_kwargs = {"latent_dim": config.latent_dim,
                   "base_channels": config.base_channels, "seed": config.seed}
    if progressive:
        arch_kwargs["schedule"] = config.schedule.to_json()
    else:
        arch_kwargs["target_res"] = config.target_resolution

    if start_iter:
        counts = {}
        for it in range(start_iter):
            r = (_pgan_stage(config.schedule, it)[1] if progressive
                 else config.target_resolution)
            bs = config.minibatch_for(r)
            counts[bs] = counts.get(bs, 0) + 1
        run.skip_batches(len(dataset), counts)

    last_stage = stage_idx
    for it in range(start_iter, config.total_iterations):
        if progressive:
            stage_idx, res, phase, alpha = _pgan_stage(config.schedule, it)
            if stage_idx != last_stage:
                if res > gen.current_res:
                    gen, disc = zoo.grow((gen, disc), res)
                    state.generator, state.discriminator = gen, disc
                    run.event(it, "grow", resolution=res)
                g_params, d_params = (gen.active_params(phase == "fade"),
                                      disc.active_params(phase == "fade"))
                if [p.name for p in g_params] != [p.name for p in state.g_opt.params]:
                    state.g_opt = _fresh_adam(g_params, config)
                if [p.name for p in d_params] != [p.name for p in state.d_opt.params]:
                    state.d_opt = _fresh_adam(d_params, config)
                run.event(it, "stage", resolution=res, phase=phase)
                last_stage = stage_idx
            state.resolution = res
            state.alpha = alpha
        bs = config.minibatch_for(state.resolution)
        idx = run.batch_indices(len(dataset), bs)
        batch = reals[state.resolution][idx]
        rng = np.random.default_rng([config.seed, 10, it])
        run.log(train_step(state, batch, config, rng))

        done = it + 1
        if config.swd_eval_every and done % config.swd_eval_every == 0:
            fakes = sample_fakes(kind, (gen, disc), config.swd_eval_samples,
                                 [config.seed, 11, done], config.latent_dim,
                                 alpha=state.alpha)
            run.eval_swd(done, state.resolution, fakes, reals[state.resolution])
        if config.checkpoint_every and done % config.checkpoint_every == 0:
            kwargs = dict(arch_kwargs, current_res=gen.current_res) \
                if progressive else arch_kwargs
            run.save(done, kind, (gen, disc), kwargs,
                     {"generator": state.g_opt, "discriminator": state.d_opt})
    kwargs = dict(arch_kwargs, current_res=gen.current_res) \
        if progressive else arch_kwargs
    return (gen, disc), kwargs, {"generator": state.g_opt,
                                 "discriminator": state.d_opt}


def _run_lapgan(run, config, dataset, models, optim_state, start_iter):
    """Coarse-to-fine: each level trains on its band for an equal share."""
    levels = config.levels
    res_of = [m.resolution for m in models]
    coarse = {r: _downscale_set(dataset, r) for r in res_of}
    batches = []
    for i in range(levels):
        if i == 0:
            batches.append({"real": coarse[res_of[0]], "cond": None})
        else:
            cond = _upsample_set(coarse[res_of[i - 1]])
            batches.append({"real": coarse[res_of[i]] - cond, "cond": cond})

    states = [LapganLevelState(m, config.latent_dim) for m in models]
    for i, st in enumerate(states):
        st.g_opt = _fresh_adam(models[i].generator.params(), config)
        st.d_opt = _fresh_adam(models[i].discriminator.params(), config)
        if optim_state is not None:
            _load_adam(st.g_opt, optim_state[f"g{i}"])
            _load_adam(st.d_opt, optim_state[f"d{i}"])
        st.iteration = start_iter

    arch_kwargs = {"levels": levels, "latent_dim": config.latent_dim,
                   "base_res": config.base_res,
                   "base_channels": config.base_channels,
                   "seed": config.seed,
                   "embed_channels": config.embed_channels}
    optim_roles = {}
    for i, st in enumerate(states):
        optim_roles[f"g{i}"] = st.g_opt
        optim_roles[f"d{i}"] = st.d_opt

    if start_iter:
        counts = {}
        for it in range(start_iter):
            bs = config.minibatch_for(res_of[_lapgan_level(config, it)])
            counts[bs] = counts.get(bs, 0) + 1
        run.skip_batches(len(dataset), counts)

    last_level = _lapgan_level(config, start_iter - 1) if start_iter else 0
    if start_iter == 0:
        run.event(0, "level", level=0, resolution=res_of[0])
    for it in range(start_iter, config.total_iterations):
        level = _lapgan_level(config, it)
        if level != last_level:
            run.event(it, "level", level=level, resolution=res_of[level])
            last_level = level
        st = states[level]
        st.iteration = it
        bs = config.minibatch_for(st.resolution)
        idx = run.batch_indices(len(dataset), bs)
        batch = {"real": batches[level]["real"][idx],
                 "cond": None if batches[level]["cond"] is None
                 else batches[level]["cond"][idx]}
        rng = np.random.default_rng([config.seed, 10, it])
        run.log(train_step(st, batch, config, rng))

        done = it + 1
        if config.swd_eval_every and done % config.swd_eval_every == 0:
            fakes = sample_fakes("lapgan", models, config.swd_eval_samples,
                                 [config.seed, 11, done], config.latent_dim,
                                 up_to_level=level)
            run.eval_swd(done, st.resolution, fakes, coarse[st.resolution])
        if config.checkpoint_every and done % config.checkpoint_every == 0:
            run.save(done, "lapgan", models, arch_kwargs, optim_roles)
    return models, arch_kwargs, optim_roles


def run_training(config, dataset, resume_from=None):
    """Execute a full training run under out_dir; returns a summary dict.

    Resuming from a checkpoint written by the same config continues the
    uninterrupted run exactly: same batches, same latents, same log lines.
    """
    data = as_image_array(dataset, config.data_resolution())
    kind = config.architecture

    optim_state = None
    start_iter = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.arch["kind"] != kind:
            raise TrainError(f"checkpoint is {ckpt.arch['kind']!r}, "
                             f"config wants {kind!r}")
        models = restore_models(ckpt)
        optim_state = ckpt.optim
        start_iter = ckpt.iteration
        if start_iter >= config.total_iterations:
            raise TrainError("checkpoint is already past total_iterations")
    elif kind == "dcgan":
        models = zoo.build_dcgan(latent_dim=config.latent_dim,
                                 target_res=config.target_resolution,
                                 base_channels=config.base_channels,
                                 seed=config.seed)
    elif kind == "pgan":
        models = zoo.build_progressive(config.schedule,
                                       latent_dim=config.latent_dim,
                                       base_channels=config.base_channels,
                                       seed=config.seed)
    else:
        models = zoo.build_lapgan(config.levels, latent_dim=config.latent_dim,
                                  base_res=config.base_res,
                                  base_channels=config.base_channels,
                                  seed=config.seed,
                                  embed_channels=config.embed_channels)

    run = _Run(config)
    try:
        if kind in ("dcgan", "pgan"):
            models, arch_kwargs, optim_roles = _run_pair(
                run, config, data, models, optim_state, start_iter)
        else:
            models, arch_kwargs, optim_roles = _run_lapgan(
                run, config, data, models, optim_state, start_iter)
        total = config.total_iterations
        if not (config.checkpoint_every and total % config.checkpoint_every == 0):
            run.save(total, kind, models, arch_kwargs, optim_roles)
    finally:
        run.close()

    return {"iterations": config.total_iterations,
            "records": run.records,
            "checkpoints": run.checkpoints,
            "final_checkpoint": run.checkpoints[-1],
            "out_dir": str(run.out)}
