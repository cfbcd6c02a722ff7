"""Dataset ingestion, preprocessing, synthetic blob data, and batch sampling.

Images flow through the pipeline as uint8 H x W x 3 arrays, are cropped and
area-averaged down to a square power-of-two resolution, then mapped to
float32 in [-1, 1] and transposed to channel-major 3 x r x r records.

A seeded synthetic dataset of elliptical "lesion" blobs on skin-toned
backgrounds stands in for real dermoscopic data at desk scale. Every record
is deterministic per (seed, index).
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

CACHE_MAGIC = b"LSNFRGE1"
CACHE_VERSION = 1


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# geometry ops


def center_crop_square(image):
    """Crop H x W x C to S x S x C, S = min(H, W), offsets floored."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise DataError(f"expected H x W x C image, got shape {image.shape}")
    h, w = image.shape[0], image.shape[1]
    if h < 1 or w < 1:
        raise DataError(f"degenerate image shape {image.shape}")
    s = min(h, w)
    r0 = (h - s) // 2
    c0 = (w - s) // 2
    return image[r0:r0 + s, c0:c0 + s].copy()


def downsample2x_avg(image):
    """Average non-overlapping 2x2 blocks of an H x W x C array."""
    image = np.asarray(image)
    h, w = image.shape[0], image.shape[1]
    if h % 2 or w % 2:
        raise DataError(f"dimensions must be even, got {image.shape}")
    x = image.astype(np.float64)
    x = x.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))
    return x.reshape(h // 2, w // 2, *image.shape[2:]).astype(np.float32)


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def _overlap_weights(src, dst):
    # row-stochastic interval-overlap matrix for exact area averaging
    scale = src / dst
    w = np.zeros((dst, src), dtype=np.float64)
    for t in range(dst):
        lo, hi = t * scale, (t + 1) * scale
        for s in range(int(np.floor(lo)), min(src, int(np.ceil(hi)))):
            w[t, s] = min(hi, s + 1) - max(lo, s)
    return w / scale


def resize_to(image, target):
    """Area-average a square image down to target x target.

    For power-of-two ratios this is literally repeated 2x2 block
    averaging, so it composes bit-exactly with downsample2x_avg.
    Upscaling is refused: source images must be at least target size.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != image.shape[1]:
        raise DataError(f"expected square H x H x C image, got shape {image.shape}")
    if not _is_pow2(target):
        raise DataError(f"target resolution must be a power of two, got {target}")
    src = image.shape[0]
    if src < target:
        raise DataError(f"refusing to upscale {src} -> {target}")
    if src == target:
        return image.astype(np.float32)
    if src % target == 0 and _is_pow2(src // target):
        out = image
        while out.shape[0] > target:
            out = downsample2x_avg(out)
        return out
    w = _overlap_weights(src, target)
    x = image.astype(np.float64)
    out = np.einsum("ts,shc,uh->tuc", w, x, w, optimize=True)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# value range


def normalize(image):
    """Map byte-range values [0, 255] to [-1, 1] via v / 127.5 - 1."""
    x = np.asarray(image, dtype=np.float32)
    return x / np.float32(127.5) - np.float32(1.0)


def denormalize(image):
    """Inverse of normalize: clamp to [-1, 1], map back to uint8."""
    x = np.clip(np.asarray(image, dtype=np.float32), -1.0, 1.0)
    v = (x + np.float32(1.0)) * np.float32(127.5)
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# records and dataset index


@dataclass
class ImageRecord:
    """One preprocessed image: 3 x r x r float32 in [-1, 1]."""

    pixels: np.ndarray
    source_id: str

    @property
    def resolution(self):
        return self.pixels.shape[1]


@dataclass
class DatasetIndex:
    root: str
    entries: list
    target_resolution: int
    skipped: list = field(default_factory=list)

    def summary(self):
        return (f"{len(self.entries)} images indexed under {self.root}, "
                f"{len(self.skipped)} skipped")


def _to_record(rgb, target_resolution, source_id):
    sq = center_crop_square(rgb)
    small = resize_to(sq, target_resolution)
    chw = np.ascontiguousarray(normalize(small).transpose(2, 0, 1))
    return ImageRecord(pixels=chw, source_id=source_id)


def load_image_record(path, target_resolution, source_id=None):
    """Decode one file and run it through crop / resize / normalize."""
    from PIL import Image

    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"))
    return _to_record(rgb, target_resolution, source_id or str(path))


def scan_dataset(root, target_resolution):
    """Recursively index decodable images under root, sorted by path."""
    from PIL import Image

    rootp = Path(root)
    if not rootp.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    entries = []
    skipped = []
    paths = sorted(p for p in rootp.rglob("*")
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    for p in paths:
        rel = p.relative_to(rootp).as_posix()
        try:
            with Image.open(p) as img:
                img.verify()
            with Image.open(p) as img:
                width, height = img.size
        except Exception as exc:
            log.warning("skipping undecodable file %s: %s", rel, exc)
            skipped.append(rel)
            continue
        entries.append((rel, width, height))
    if not entries:
        raise DataError(f"no decodable images under {root}")
    index = DatasetIndex(root=str(root), entries=entries,
                         target_resolution=target_resolution, skipped=skipped)
    log.info("%s", index.summary())
    return index


def load_indexed(index):
    """Materialize every indexed file as an ImageRecord, in index order."""
    out = []
    for rel, _, _ in index.entries:
        out.append(load_image_record(Path(index.root) / rel,
                                     index.target_resolution, source_id=rel))
    return out


def records_to_array(records):
    """Stack records into one float32 (N, 3, r, r) array."""
    if not records:
        raise DataError("empty record list")
    return np.stack([r.pixels for r in records]).astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic blob dataset


_BLOB_PALETTE = np.array([
    [0.35, 0.20, 0.12],   # brown
    [0.08, 0.07, 0.07],   # black
    [0.55, 0.12, 0.10],   # red
])
_SKIN_BASE = np.array([0.92, 0.78, 0.68])
_EDGE_BAND = 0.15


def synth_blob(seed, index, resolution):
    """Render one blob image deterministically from (seed, index).

    Returns (pixels, mask): pixels is 3 x r x r float32 in [-1, 1], mask is
    the boolean blob-interior footprint used for coverage measurement.
    """
    rng = np.random.default_rng([seed, index])
    r = resolution

    skin = np.clip(_SKIN_BASE + rng.uniform(-0.04, 0.04, size=3), 0.0, 1.0)
    tone = _BLOB_PALETTE[rng.integers(len(_BLOB_PALETTE))]
    tone = np.clip(tone + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)

    cy = rng.uniform(0.2, 0.8) * r
    cx = rng.uniform(0.2, 0.8) * r
    a = rng.uniform(0.10, 0.40) * r
    b = rng.uniform(0.10, 0.40) * r
    theta = rng.uniform(0.0, np.pi)

    yy, xx = np.mgrid[0:r, 0:r]
    dy = (yy + 0.5) - cy
    dx = (xx + 0.5) - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = (dx * ct + dy * st) / a
    v = (-dx * st + dy * ct) / b
    dist = np.sqrt(u * u + v * v)

    t = np.clip((1.0 - dist) / _EDGE_BAND, 0.0, 1.0)
    alpha = t * t * (3.0 - 2.0 * t)

    img = skin[:, None, None] * (1.0 - alpha) + tone[:, None, None] * alpha
    img = img * 2.0 - 1.0
    img = img + rng.normal(0.0, 0.02, size=img.shape)
    pixels = np.clip(img, -1.0, 1.0).astype(np.float32)
    return pixels, alpha > 0.5


def synth_blob_dataset(seed, count, resolution):
    """Generate count seeded blob records at the given resolution."""
    if count < 1:
        raise DataError(f"count must be >= 1, got {count}")
    out = []
    for i in range(count):
        pixels, _ = synth_blob(seed, i, resolution)
        out.append(ImageRecord(pixels=pixels, source_id=f"synth/{seed}/{i:05d}"))
    return out


# ---------------------------------------------------------------------------
# binary cache: 16-byte header (magic, version, resolution) + f32 LE payload


def write_cache(path, pixels):
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.ndim != 3 or pixels.shape[0] != 3 or pixels.shape[1] != pixels.shape[2]:
        raise DataError(f"cache payload must be 3 x r x r, got {pixels.shape}")
    header = CACHE_MAGIC + struct.pack("<II", CACHE_VERSION, pixels.shape[1])
    Path(path).write_bytes(header + pixels.astype("<f4").tobytes())


def read_cache(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != CACHE_MAGIC:
        raise DataError(f"{path}: not a lesionforge image cache file")
    version, resolution = struct.unpack("<II", raw[8:16])
    if version != CACHE_VERSION:
        raise DataError(f"{path}: unsupported cache version {version}")
    expected = 3 * resolution * resolution * 4
    if len(raw) - 16 != expected:
        raise DataError(f"{path}: truncated payload, "
                        f"expected {expected} bytes, got {len(raw) - 16}")
    arr = np.frombuffer(raw, dtype="<f4", offset=16)
    return arr.reshape(3, resolution, resolution).copy()


def write_cache_dir(root, pixels):
    """One cache file per image, named by zero-padded index."""
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.ndim != 4 or pixels.shape[0] < 1:
        raise DataError(f"expected (N, 3, r, r) images, got {pixels.shape}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(pixels):
        write_cache(root / f"{i:05d}.lfc", img)
    return root


def read_cache_dir(root):
    root = Path(root)
    files = sorted(root.glob("*.lfc"))
    if not files:
        raise DataError(f"no cache files under {root}")
    images = [read_cache(p) for p in files]
    res = images[0].shape[-1]
    for p, img in zip(files, images):
        if img.shape[-1] != res:
            raise DataError(f"{p}: resolution {img.shape[-1]} differs "
                            f"from the set's {res}")
    return np.stack(images)


# ---------------------------------------------------------------------------
# batching


class BatchSampler:
    """Seeded epoch-permutation minibatch index stream.

    Each epoch draws a fresh permutation from default_rng([seed, 4, epoch]);
    only full batches are emitted, the remainder is dropped. The whole index
    sequence is a pure function of (n_items, batch_size, seed), so resuming
    is just skipping the already-consumed batch count.
    """

    def __init__(self, n_items, batch_size, seed, start_batch=0):
        if batch_size < 1 or batch_size > n_items:
            raise DataError(f"batch_size {batch_size} invalid for {n_items} items")
        self.n_items = int(n_items)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.batches_per_epoch = self.n_items // self.batch_size
        self.batches_drawn = int(start_batch)
        self._epoch = -1
        self._perm = None

    def next_indices(self):
        epoch, k = divmod(self.batches_drawn, self.batches_per_epoch)
        if epoch != self._epoch:
            rng = np.random.default_rng([self.seed, 4, epoch])
            self._perm = rng.permutation(self.n_items)
            self._epoch = epoch
        self.batches_drawn += 1
        lo = k * self.batch_size
        return self._perm[lo:lo + self.batch_size].copy()

    def skip(self, n_batches):
        self.batches_drawn += int(n_batches)

    @property
    def samples_consumed(self):
        return self.batches_drawn * self.batch_size
