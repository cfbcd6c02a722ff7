import numpy as np
import pytest

import lesionforge.checkpoint as C
import lesionforge.zoo as Z
from lesionforge.optim import Adam
from lesionforge.tensor import Tensor

RNG = np.random.default_rng(0)


def dcgan_fixture(seed=5):
    gen, disc = Z.build_dcgan(latent_dim=16, target_res=8, base_channels=16, seed=seed)
    arch = C.models_arch("dcgan", latent_dim=16, target_res=8, base_channels=16, seed=seed)
    return arch, (gen, disc)


def optim_state(opt):
    return {"scalars": opt.state_scalars(),
            "m": dict(opt.m), "v": dict(opt.v)}


def test_roundtrip_bit_exact(tmp_path):
    arch, (gen, disc) = dcgan_fixture()
    params = {p.name: p.data for p in gen.params() + disc.params()}
    g_opt = Adam(gen.params(), lr=2e-4, beta1=0.5)
    for p in gen.params():
        p.grad = RNG.standard_normal(p.shape).astype(np.float32)
    g_opt.step()
    path = tmp_path / "ck.ckpt"
    C.save_checkpoint(path, arch, params, {"g": optim_state(g_opt)}, iteration=17)
    ck = C.load_checkpoint(path)
    assert ck.iteration == 17
    assert ck.arch == arch
    for name, arr in params.items():
        assert np.array_equal(ck.params[name], arr)
        assert ck.params[name].dtype == arr.dtype
    assert ck.optim["g"]["scalars"]["t"] == 1
    for name in g_opt.m:
        assert np.array_equal(ck.optim["g"]["m"][name], g_opt.m[name])
        assert np.array_equal(ck.optim["g"]["v"][name], g_opt.v[name])


def test_save_load_save_is_byte_identical(tmp_path):
    arch, (gen, disc) = dcgan_fixture()
    params = {p.name: p.data for p in gen.params() + disc.params()}
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    C.save_checkpoint(p1, arch, params, {}, iteration=3)
    ck = C.load_checkpoint(p1)
    C.save_checkpoint(p2, ck.arch, ck.params, ck.optim, ck.iteration)
    assert p1.read_bytes() == p2.read_bytes()


def test_version_mismatch(tmp_path):
    path = tmp_path / "v.ckpt"
    arch, (gen, disc) = dcgan_fixture()
    C.save_checkpoint(path, arch, {"x": np.zeros(2, dtype=np.float32)}, {}, 0)
    data = path.read_bytes().replace(b"lesionforge-ckpt/1", b"lesionforge-ckpt/9", 1)
    path.write_bytes(data)
    with pytest.raises(C.CheckpointVersionError):
        C.load_checkpoint(path)


def test_truncation_detected(tmp_path):
    path = tmp_path / "t.ckpt"
    C.save_checkpoint(path, {"kind": "dcgan"}, {"x": np.arange(64, dtype=np.float32)}, {}, 0)
    data = path.read_bytes()
    path.write_bytes(data[:-32])
    with pytest.raises(C.CheckpointTruncatedError):
        C.load_checkpoint(path)
    path.write_bytes(data[:40])  # header cut before terminator
    with pytest.raises(C.CheckpointTruncatedError):
        C.load_checkpoint(path)


def test_checksum_detected(tmp_path):
    path = tmp_path / "c.ckpt"
    C.save_checkpoint(path, {"kind": "dcgan"}, {"x": np.arange(64, dtype=np.float32)}, {}, 0)
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF  # flip one payload bit, leaving lengths intact
    path.write_bytes(bytes(data))
    with pytest.raises(C.CheckpointChecksumError):
        C.load_checkpoint(path)


def test_restore_dcgan_models(tmp_path):
    arch, (gen, disc) = dcgan_fixture(seed=9)
    for p in gen.params() + disc.params():  # make values distinct from init
        p.data = p.data + np.float32(0.125)
    params = {p.name: p.data for p in gen.params() + disc.params()}
    path = tmp_path / "m.ckpt"
    C.save_checkpoint(path, arch, params, {}, iteration=42)
    gen2, disc2 = C.restore_models(C.load_checkpoint(path))
    z = Tensor(RNG.standard_normal((2, 16)).astype(np.float32))
    assert np.array_equal(gen(z).data, gen2(z).data)
    for a, b in zip(gen.params() + disc.params(), gen2.params() + disc2.params()):
        assert a.name == b.name
        assert np.array_equal(a.data, b.data)


def test_restore_pgan_after_growth(tmp_path):
    sched = Z.ProgressiveSchedule.ramp(4, 8, 5, 5)
    pair = Z.build_progressive(sched, latent_dim=16, base_channels=16, seed=2)
    pair = Z.grow(pair, 8)
    gen, disc = pair
    for p in gen.params() + disc.params():
        p.data = p.data * np.float32(1.25)
    arch = C.models_arch("pgan", latent_dim=16, base_channels=16, seed=2,
                         current_res=8, schedule=sched.to_json())
    params = {p.name: p.data for p in gen.params() + disc.params()}
    path = tmp_path / "p.ckpt"
    C.save_checkpoint(path, arch, params, {}, iteration=10)
    gen2, disc2 = C.restore_models(C.load_checkpoint(path))
    assert gen2.current_res == 8
    z = Tensor(RNG.standard_normal((2, 16)).astype(np.float32))
    assert np.array_equal(gen(z, alpha=0.5).data, gen2(z, alpha=0.5).data)


def test_restore_lapgan_models(tmp_path):
    models = Z.build_lapgan(2, latent_dim=16, base_res=8, base_channels=16, seed=3)
    arch = C.models_arch("lapgan", levels=2, latent_dim=16, base_res=8,
                         base_channels=16, seed=3, embed_channels=8)
    params = {p.name: p.data for m in models for p in m.params()}
    path = tmp_path / "l.ckpt"
    C.save_checkpoint(path, arch, params, {}, iteration=0)
    models2 = C.restore_models(C.load_checkpoint(path))
    zs = [Tensor(RNG.standard_normal((1, 16)).astype(np.float32)) for _ in models]
    a = Z.lapgan_sample(models, zs)
    b = Z.lapgan_sample(models2, zs)
    assert np.array_equal(a.data, b.data)


def test_restore_rejects_parameter_set_mismatch(tmp_path):
    arch, (gen, disc) = dcgan_fixture()
    params = {p.name: p.data for p in gen.params() + disc.params()}
    params.pop(next(iter(params)))
    path = tmp_path / "x.ckpt"
    C.save_checkpoint(path, arch, params, {}, iteration=0)
    with pytest.raises(C.CheckpointError, match="mismatch"):
        C.restore_models(C.load_checkpoint(path))


def test_float64_blobs_roundtrip(tmp_path):
    path = tmp_path / "d.ckpt"
    arr = RNG.standard_normal((3, 4))
    C.save_checkpoint(path, {"kind": "dcgan"}, {"w": arr}, {}, 0)
    ck = C.load_checkpoint(path)
    assert ck.params["w"].dtype == np.float64
    assert np.array_equal(ck.params["w"], arr)
