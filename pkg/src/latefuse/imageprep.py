"""Resize, per-channel dataset normalization and the LBP texture channel.

Images are ``(height, width, channels)`` float64 arrays wrapped in
:class:`Image`.  Raw loads hold values in ``[0, 255]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ContractError

DEFAULT_SIZE = (224, 224)
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# (row offset, col offset) clockwise from the top-left neighbour; bit k has weight 2**k.
LBP_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


@dataclass(frozen=True)
class Image:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3, 4):
            raise ContractError(f"image must be HxWxC with C in (1, 3, 4), got {data.shape}")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple
    std: tuple

    def __post_init__(self):
        mean = tuple(float(m) for m in self.mean)
        std = tuple(float(s) for s in self.std)
        if len(mean) != len(std) or not mean:
            raise ContractError("mean and std must be non-empty and equally long")
        if any(not s > 0 for s in std):
            raise ContractError(f"standard deviations must be positive: {std}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_json(self, **extra) -> str:
        return json.dumps({"mean": list(self.mean), "std": list(self.std), **extra}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ChannelStats":
        doc = json.loads(text)
        return cls(tuple(doc["mean"]), tuple(doc["std"]))


def resize_bilinear(img: Image, out_h: int = DEFAULT_SIZE[0], out_w: int = DEFAULT_SIZE[1]) -> Image:
    """Bilinear resize with corner-aligned sampling.

    Output pixel ``i`` samples source coordinate ``i * (in - 1) / (out - 1)``,
    so the corner pixels map exactly onto each other.
    """
    if out_h < 1 or out_w < 1:
        raise ContractError(f"cannot resize to {out_h}x{out_w}")
    src = img.data
    if (out_h, out_w) == src.shape[:2]:
        return Image(src)

    def axis(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(np.intp), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis(src.shape[0], out_h)
    c0, c1, fc = axis(src.shape[1], out_w)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = src[r0][:, c0] * (1 - fc) + src[r0][:, c1] * fc
    bottom = src[r1][:, c0] * (1 - fc) + src[r1][:, c1] * fc
    return Image(top * (1 - fr) + bottom * fr)


def channel_stats(images: Sequence[Image]) -> ChannelStats:
    """Population mean and standard deviation per channel over a dataset."""
    if not images:
        raise ContractError("channel_stats needs at least one image")
    n_ch = images[0].channels
    if any(im.channels != n_ch for im in images):
        raise ContractError("all images must have the same channel count")
    count = sum(im.height * im.width for im in images)
    total = np.zeros(n_ch)
    for im in images:
        total += im.data.sum(axis=(0, 1))
    mean = total / count
    sq = np.zeros(n_ch)
    for im in images:
        sq += ((im.data - mean) ** 2).sum(axis=(0, 1))
    std = np.sqrt(sq / count)
    for ch, s in enumerate(std):
        if s == 0:
            raise ContractError(f"channel {ch} is constant across the dataset (std = 0)")
    return ChannelStats(tuple(mean), tuple(std))


def normalize(img: Image, stats: ChannelStats) -> Image:
    if len(stats.mean) != img.channels:
        raise ContractError(
            f"stats have {len(stats.mean)} channels, image has {img.channels}"
        )
    return Image((img.data - np.array(stats.mean)) / np.array(stats.std))


def to_grayscale(img: Image) -> Image:
    if img.channels != 3:
        raise ContractError(f"grayscale conversion needs 3 channels, got {img.channels}")
    return Image(img.data @ LUMA_WEIGHTS)


def lbp(img: Image) -> Image:
    """Classic 3x3 local binary pattern codes.

    A neighbour sets its bit when it is >= the centre.  Borders are handled by
    edge replication, so the output has the input's height and width.
    """
    if img.channels != 1:
        raise ContractError(f"lbp needs a single-channel image, got {img.channels}")
    if img.height < 3 or img.width < 3:
        raise ContractError(f"lbp needs at least 3x3 pixels, got {img.height}x{img.width}")
    g = img.data[:, :, 0]
    padded = np.pad(g, 1, mode="edge")
    h, w = g.shape
    codes = np.zeros((h, w), dtype=np.int64)
    for bit, (dr, dc) in enumerate(LBP_NEIGHBOURS):
        neighbour = padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
        codes |= (neighbour >= g).astype(np.int64) << bit
    return Image(codes.astype(np.float64))


def append_lbp_channel(img: Image) -> Image:
    """RGB -> RGB + LBP of the luma image as a fourth plane."""
    if img.channels != 3:
        raise ContractError(f"expected an RGB image, got {img.channels} channels")
    codes = lbp(to_grayscale(img)).data
    return Image(np.concatenate([img.data, codes], axis=2))


# --- PPM / PGM --------------------------------------------------------------


def _read_header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise ContractError("truncated PNM header")
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pnm(path) -> Image:
    """Read a binary PGM (P5) or PPM (P6) file with maxval 255."""
    buf = Path(path).read_bytes()
    tokens, offset = _read_header_tokens(buf, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ContractError(f"{path}: unsupported format {magic!r}, expected P5 or P6")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ContractError(f"{path}: malformed header") from None
    if maxval != 255:
        raise ContractError(f"{path}: maxval must be 255, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    raster = buf[offset : offset + n]
    if len(raster) != n:
        raise ContractError(f"{path}: expected {n} raster bytes, found {len(raster)}")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return Image(data.astype(np.float64))


def write_pnm(path, img: Image) -> None:
    if img.channels not in (1, 3):
        raise ContractError("only 1- and 3-channel images can be written as PGM/PPM")
    data = img.data
    if data.min() < 0 or data.max() > 255 or not np.array_equal(data, np.round(data)):
        raise ContractError("PNM output needs integer pixel values in [0, 255]")
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    Path(path).write_bytes(header + data.astype(np.uint8).tobytes())
