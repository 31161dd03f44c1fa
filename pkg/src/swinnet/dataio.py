"""Manifests, image loading, Canny edge targets and the checkpoint format."""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .tensor.ops import resize_matrix

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])


class FormatError(ValueError):
    """Malformed manifest or checkpoint."""


class CheckpointMismatch(FormatError):
    def __init__(self, expected: bytes, found: bytes):
        self.expected, self.found = expected, found
        super().__init__(f"config hash mismatch: expected {expected.hex()}, checkpoint has {found.hex()}")


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class Entry:
    id: str
    rgb: Path
    aux: Path
    gt: Path


@dataclass
class DatasetManifest:
    entries: list
    split: str = "train"

    def __len__(self) -> int:
        return len(self.entries)


def read_manifest(path, split: str = "train", check_exists: bool = True) -> DatasetManifest:
    """JSON array of {"id", "rgb", "aux", "gt"}; relative paths resolve against the file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: {e}") from None
    if not isinstance(raw, list):
        raise FormatError(f"{path}: manifest must be a JSON array")
    base = path.parent
    entries, seen = [], set()
    for i, rec in enumerate(raw):
        try:
            e = Entry(str(rec["id"]), base / rec["rgb"], base / rec["aux"], base / rec["gt"])
        except (KeyError, TypeError):
            raise FormatError(f"{path}: entry {i} needs id/rgb/aux/gt") from None
        if e.id in seen:
            raise FormatError(f"{path}: duplicate id {e.id!r}")
        seen.add(e.id)
        if check_exists:
            for p in (e.rgb, e.aux, e.gt):
                if not p.exists():
                    raise FileNotFoundError(f"{path}: entry {e.id!r} references missing file {p}")
        entries.append(e)
    return DatasetManifest(entries, split)


def write_manifest(path, entries: Sequence[Entry]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    recs = [{"id": e.id, **{k: os.path.relpath(Path(getattr(e, k)).resolve(), base)
                            for k in ("rgb", "aux", "gt")}} for e in entries]
    path.write_text(json.dumps(recs, indent=2) + "\n")


# ---------------------------------------------------------------------------
# images


def read_image(path) -> np.ndarray:
    """H x W (grayscale) or H x W x 3 float64 array scaled to [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                return arr / (65535.0 if arr.max() > 255 else 255.0)
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if len(im.getbands()) >= 3 else "L")
            return np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as e:
        raise OSError(f"cannot read image {path}: {e}") from None


def write_gray_png(path, values: np.ndarray) -> None:
    """Write a [0, 1] map as 8-bit grayscale (round(255 * v))."""
    arr = np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Half-pixel bilinear resize of an H x W or C x H x W float array."""
    ah = resize_matrix(img.shape[-2], h)
    aw = resize_matrix(img.shape[-1], w)
    return np.matmul(ah, img) @ aw.T


def resize_nearest(img: np.ndarray, h: int, w: int) -> np.ndarray:
    sh, sw = img.shape[-2:]
    rows = np.minimum(((np.arange(h) + 0.5) * sh / h).astype(int), sh - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * sw / w).astype(int), sw - 1)
    return img[..., rows[:, None], cols[None, :]]


def normalize_rgb(rgb01: np.ndarray) -> np.ndarray:
    """3 x H x W in [0, 1] -> per-channel standardized."""
    return (rgb01 - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]


def minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


@dataclass
class Sample:
    id: str
    rgb: np.ndarray       # 3 x S x S, standardized
    aux: np.ndarray       # 3 x S x S, min-max then standardized
    saliency: np.ndarray  # S x S in {0, 1}
    edge: np.ndarray      # S x S in {0, 1}
    gt_size: tuple = ()


def make_sample(sample_id: str, rgb01: np.ndarray, aux: np.ndarray, gt01: np.ndarray,
                size: int) -> Sample:
    """Build a sample from in-memory arrays (H x W x 3 rgb, H x W aux and gt)."""
    if rgb01.ndim == 2:
        rgb01 = np.repeat(rgb01[..., None], 3, axis=2)
    rgb = resize_bilinear(np.moveaxis(rgb01, -1, 0), size, size)
    if aux.ndim == 3:
        aux = aux.mean(axis=2)
    a = resize_bilinear(minmax(aux), size, size)
    a3 = normalize_rgb(np.repeat(a[None], 3, axis=0))
    g = (resize_nearest(gt01 if gt01.ndim == 2 else gt01.mean(axis=2), size, size) >= 0.5)
    g = g.astype(np.float64)
    return Sample(sample_id, normalize_rgb(rgb), a3, g, canny_edges(g), tuple(gt01.shape[:2]))


def load_sample(entry: Entry, size: int) -> Sample:
    return make_sample(entry.id, read_image(entry.rgb), read_image(entry.aux),
                       read_image(entry.gt), size)


# ---------------------------------------------------------------------------
# Canny


def gaussian_kernel(size: int = 5, sigma: float = 1.4) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_TAN22 = math.tan(math.pi / 8)


def canny_edges(mask: np.ndarray, sigma: float = 1.4, low: float = 0.1,
                high: float = 0.2) -> np.ndarray:
    """Binary 1-pixel edges of a binary mask.

    Blur (5x5 Gaussian), Sobel, non-maximum suppression, double threshold
    relative to the max gradient, hysteresis with 8-connectivity. The mask
    is centred to {-1, +1} first so a mask and its complement give the same
    gradient magnitudes exactly.
    """
    m = 2.0 * np.asarray(mask, dtype=np.float64) - 1.0
    if m.size == 0 or np.all(m == m.flat[0]):
        # constant masks would otherwise amplify rounding noise in the blur
        return np.zeros(m.shape)
    b =ndimage.correlate(m, gaussian_kernel(5, sigma), mode="nearest")
    gx = ndimage.correlate(b, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(b, _SOBEL_X.T, mode="nearest")
    mag = np.hypot(gx, gy)
    top = mag.max()
    if top <= 0:
        return np.zeros(m.shape)
    # snap to a relative grid so mirror-image ridges tie exactly
    mag = np.round(mag / top, 9)
    top = 1.0

    ax, ay = np.abs(gx), np.abs(gy)
    p = np.pad(mag, 1)
    h, w = mag.shape

    def nb(dr, dc):
        return p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    horiz = ay <= ax * _TAN22
    vert = ~horiz & (ax <= ay * _TAN22)
    diag = ~horiz & ~vert & (gx * gy > 0)
    anti = ~horiz & ~vert & ~diag
    keep = np.zeros_like(mag, dtype=bool)
    # ties resolve toward the +offset neighbour, keeping exactly one pixel of a flat ridge
    for sel, (dr, dc) in ((horiz, (0, 1)), (vert, (1, 0)), (diag, (1, 1)), (anti, (1, -1))):
        keep |= sel & (mag >= nb(-dr, -dc)) & (mag > nb(dr, dc))
    nms = np.where(keep, mag, 0.0)

    strong = nms >= high * top
    weak = nms >= low * top
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros(m.shape)
    good = np.zeros(n + 1, dtype=bool)
    good[np.unique(labels[strong])] = True
    good[0] = False
    return good[labels].astype(np.float64)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"SWNT"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(path, state: dict, config_hash: bytes) -> None:
    """Write ``state`` (name -> float array) in the SWNT binary format.

    Layout (little-endian): magic, version u32, config hash [32], tensor
    count u32, payload size u64, then per tensor: name length u32, utf-8
    name, dtype code u8 (0 f32, 1 f64), rank u32, dims u64 x rank, offset
    u64, byte count u64; then the payload.
    """
    if len(config_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    directory, blobs, offset = [], [], 0
    for name, arr in state.items():
        arr = np.asarray(arr)
        dt = np.dtype(arr.dtype).newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
        blob = np.ascontiguousarray(arr, dtype=dt).tobytes()
        nb = name.encode()
        directory.append(struct.pack("<I", len(nb)) + nb
                         + struct.pack("<BI", _DTYPE_CODES[dt], arr.ndim)
                         + struct.pack(f"<{arr.ndim}Q", *arr.shape)
                         + struct.pack("<QQ", offset, len(blob)))
        blobs.append(blob)
        offset += len(blob)
    header = MAGIC + struct.pack("<I", VERSION) + config_hash + struct.pack("<IQ", len(blobs), offset)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.writelines(directory)
        f.writelines(blobs)
    os.replace(tmp, path)


def read_checkpoint_hash(path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(40)
    if len(head) < 40 or head[:4] != MAGIC:
        raise FormatError(f"{path}: not a SWNT checkpoint")
    return head[8:40]


def load_checkpoint(path, expected_hash: Optional[bytes] = None) -> tuple[dict, bytes]:
    """Read a checkpoint; returns (state, config hash). Nothing is returned on any error."""
    data = Path(path).read_bytes()
    try:
        if data[:4] != MAGIC:
            raise FormatError(f"{path}: bad magic {data[:4]!r}")
        (version,) = struct.unpack_from("<I", data, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        chash = data[8:40]
        count, payload_size = struct.unpack_from("<IQ", data, 40)
        pos = 52
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BI", data, pos)
            pos += 5
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            off, nbytes = struct.unpack_from("<QQ", data, pos)
            pos += 16
            if code not in _CODE_DTYPES:
                raise FormatError(f"{path}: {name}: unknown dtype code {code}")
            entries.append((name, _CODE_DTYPES[code], shape, off, nbytes))
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: corrupt header ({e})") from None
    if len(data) - pos != payload_size:
        raise FormatError(f"{path}: payload is {len(data) - pos} bytes, header says {payload_size}")
    if expected_hash is not None and expected_hash != chash:
        raise CheckpointMismatch(expected_hash, chash)
    state, end = {}, 0
    for name, dt, shape, off, nbytes in sorted(entries, key=lambda e: e[3]):
        if off < end or off + nbytes > payload_size or nbytes != int(np.prod(shape)) * dt.itemsize:
            raise FormatError(f"{path}: {name}: bad directory entry")
        end = off + nbytes
        state[name] = np.frombuffer(data, dtype=dt, count=int(np.prod(shape)),
                                    offset=pos + off).reshape(shape).copy()
    return {name: state[name] for name, *_ in entries}, chash
