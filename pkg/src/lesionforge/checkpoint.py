"""Self-describing checkpoints: text manifest followed by raw parameter blobs.

Layout (all text UTF-8, lines \\n-terminated):

    lesionforge-ckpt/1
    iteration <int>
    arch <json>
    optim <json>
    blob <key> <dtype> <comma-shape> <offset> <nbytes> <crc32>
    ...
    end
    <concatenated little-endian array bytes>

Blob keys cover model parameters (``param/<name>``) and optimizer moment
arrays (``optim/<role>/m|v/<name>``). Entries are sorted by key and JSON
is canonicalized, so save -> load -> save reproduces the file byte for
byte. Version, truncation and checksum problems raise distinct errors.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lesionforge import zoo

VERSION = "lesionforge-ckpt/1"
_HEADER_END = b"\nend\n"
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def _canon_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _encode_array(arr):
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    code = "<f4" if dt == np.dtype("<f4") else "<f8" if dt == np.dtype("<f8") else None
    if code is None:
        raise CheckpointError(f"unsupported array dtype {arr.dtype}")
    return code, arr.astype(dt, copy=False).tobytes()


@dataclass
class Checkpoint:
    iteration: int
    arch: dict
    params: dict = field(default_factory=dict)
    optim: dict = field(default_factory=dict)


def save_checkpoint(path, arch, params, optim, iteration):
    """Write a checkpoint.

    params: dict of parameter name -> ndarray.
    optim: dict role -> {"scalars": jsonable, "m": {name: arr}, "v": {name: arr}}.
    """
    blobs = {}
    for name, arr in params.items():
        blobs[f"param/{name}"] = arr
    scalars = {}
    for role, state in optim.items():
        scalars[role] = state.get("scalars", {})
        for kind in ("m", "v"):
            for name, arr in state.get(kind, {}).items():
                blobs[f"optim/{role}/{kind}/{name}"] = arr

    lines = [VERSION, f"iteration {int(iteration)}",
             f"arch {_canon_json(arch)}", f"optim {_canon_json(scalars)}"]
    payload = bytearray()
    for key in sorted(blobs):
        if any(ch.isspace() for ch in key):
            raise CheckpointError(f"blob key contains whitespace: {key!r}")
        code, raw = _encode_array(blobs[key])
        shape = ",".join(str(s) for s in np.asarray(blobs[key]).shape)
        crc = zlib.crc32(raw) & 0xFFFFFFFF
        lines.append(f"blob {key} {code} {shape} {len(payload)} {len(raw)} {crc}")
        payload.extend(raw)
    data = ("\n".join(lines)).encode("utf-8") + _HEADER_END + bytes(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


def load_checkpoint(path):
    data = Path(path).read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise CheckpointTruncatedError("file too short for a version line")
    version = data[:newline].decode("utf-8", errors="replace")
    if version != VERSION:
        raise CheckpointVersionError(f"expected {VERSION!r}, found {version!r}")
    sep = data.find(_HEADER_END)
    if sep < 0:
        raise CheckpointTruncatedError("header terminator missing")
    try:
        header = data[:sep].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"undecodable header: {exc}") from None
    payload = data[sep + len(_HEADER_END):]

    iteration, arch, optim_scalars = None, None, {}
    entries = []
    for line in header.splitlines()[1:]:
        key, _, rest = line.partition(" ")
        if key == "iteration":
            iteration = int(rest)
        elif key == "arch":
            arch = json.loads(rest)
        elif key == "optim":
            optim_scalars = json.loads(rest)
        elif key == "blob":
            name, code, shape_s, off_s, n_s, crc_s = rest.split(" ")
            if code not in _DTYPES:
                raise CheckpointError(f"unknown blob dtype {code!r}")
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            entries.append((name, code, shape, int(off_s), int(n_s), int(crc_s)))
        else:
            raise CheckpointError(f"unknown manifest key {key!r}")
    if iteration is None or arch is None:
        raise CheckpointError("manifest missing iteration or arch")

    ckpt = Checkpoint(iteration=iteration, arch=arch)
    for role, scalars in optim_scalars.items():
        ckpt.optim[role] = {"scalars": scalars, "m": {}, "v": {}}
    for name, code, shape, off, n, crc in entries:
        if off + n > len(payload):
            raise CheckpointTruncatedError(
                f"blob {name} needs bytes [{off}, {off + n}), file has {len(payload)}")
        raw = payload[off:off + n]
        if (zlib.crc32(raw) & 0xFFFFFFFF) != crc:
            raise CheckpointChecksumError(f"checksum mismatch for blob {name}")
        arr = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(shape)
        if name.startswith("param/"):
            ckpt.params[name[len("param/"):]] = arr
        elif name.startswith("optim/"):
            _, role, kind, pname = name.split("/", 3)
            ckpt.optim.setdefault(role, {"scalars": {}, "m": {}, "v": {}})
            ckpt.optim[role][kind][pname] = arr
        else:
            raise CheckpointError(f"unknown blob namespace {name!r}")
    return ckpt


# --- model (re)construction --------------------------------------------------

def models_arch(kind, **kwargs):
    return {"kind": kind, **kwargs}


def build_from_arch(arch):
    """Reconstruct untrained models exactly as the builders made them."""
    kind = arch.get("kind")
    if kind == "dcgan":
        return zoo.build_dcgan(latent_dim=arch["latent_dim"],
                               target_res=arch["target_res"],
                               base_channels=arch["base_channels"],
                               seed=arch["seed"])
    if kind == "lapgan":
        return zoo.build_lapgan(arch["levels"], latent_dim=arch["latent_dim"],
                                base_res=arch["base_res"],
                                base_channels=arch["base_channels"],
                                seed=arch["seed"],
                                embed_channels=arch["embed_channels"])
    if kind == "pgan":
        sched = zoo.ProgressiveSchedule.from_json(arch["schedule"])
        pair = zoo.build_progressive(sched, latent_dim=arch["latent_dim"],
                                     base_channels=arch["base_channels"],
                                     seed=arch["seed"])
        res = sched.base_resolution
        while res < arch["current_res"]:
            res *= 2
            pair = zoo.grow(pair, res)
        return pair
    raise CheckpointError(f"unknown architecture kind {kind!r}")


def model_params(kind, models):
    """Flat name -> Parameter map over whatever structure the kind uses."""
    if kind in ("dcgan", "pgan"):
        gen, disc = models
        plist = gen.params() + disc.params()
    elif kind == "lapgan":
        plist = [p for m in models for p in m.params()]
    else:
        raise CheckpointError(f"unknown architecture kind {kind!r}")
    out = {}
    for p in plist:
        if p.name in out:
            raise CheckpointError(f"duplicate parameter name {p.name}")
        out[p.name] = p
    return out


def restore_models(ckpt):
    """Rebuild models from the manifest and load parameter values bit-exactly."""
    models = build_from_arch(ckpt.arch)
    by_name = model_params(ckpt.arch["kind"], models)
    missing = set(by_name) - set(ckpt.params)
    extra = set(ckpt.params) - set(by_name)
    if missing or extra:
        raise CheckpointError(f"parameter set mismatch: missing={sorted(missing)[:3]} "
                              f"extra={sorted(extra)[:3]}")
    for name, arr in ckpt.params.items():
        p = by_name[name]
        if tuple(arr.shape) != p.shape or arr.dtype != p.dtype:
            raise CheckpointError(f"blob {name} is {arr.shape}/{arr.dtype}, "
                                  f"model wants {p.shape}/{p.dtype}")
        p.data = arr.copy()
    return models
