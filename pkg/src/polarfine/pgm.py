"""Binary PGM (P5) and PPM (P6) readers/writers.

Masks travel as P5 with maxval 255: 0 = background, 255 = foreground.
Three-plane images are stored as a single P5 with the planes stacked
vertically (height = 3 * H).
"""

from __future__ import annotations

import numpy as np

from .codec import BitMask


def _read_header(fh, magic: bytes):
    got = fh.read(2)
    if got != magic:
        raise ValueError(f"expected {magic!r} header, got {got!r}")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated PNM header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in text.split())
    width, height, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    return width, height


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError("write_pgm needs a 2-D array")
    data = np.clip(np.round(gray), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        width, height = _read_header(fh, b"P5")
        raw = fh.read(width * height)
    if len(raw) != width * height:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width)


def write_mask_pgm(path, mask: BitMask) -> None:
    write_pgm(path, mask.bits.astype(np.uint8) * 255)


def read_mask_pgm(path) -> BitMask:
    return BitMask(read_pgm(path) >= 128)


def write_planes_pgm(path, planes: np.ndarray) -> None:
    """Stack a (C, H, W) float array in [0, 1] into one tall 8-bit PGM."""
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim != 3:
        raise ValueError("write_planes_pgm needs a (C, H, W) array")
    c, h, w = planes.shape
    write_pgm(path, (planes * 255.0).reshape(c * h, w))


def read_planes_pgm(path, channels: int) -> np.ndarray:
    tall = read_pgm(path)
    if tall.shape[0] % channels != 0:
        raise ValueError(f"height {tall.shape[0]} not divisible by {channels} planes")
    h = tall.shape[0] // channels
    return tall.reshape(channels, h, tall.shape[1]).astype(np.float64) / 255.0


def write_ppm(path, rgb: np.ndarray) -> None:
    """(H, W, 3) uint8 or [0, 1] float image as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("write_ppm needs an (H, W, 3) array")
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (rgb.shape[1], rgb.shape[0]))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        width, height = _read_header(fh, b"P6")
        raw = fh.read(width * height * 3)
    if len(raw) != width * height * 3:
        raise ValueError("truncated PPM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
