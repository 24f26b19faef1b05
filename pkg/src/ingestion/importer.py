"""Binary PPM/PGM codecs for images, label maps and depth maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from src.errors import DimensionMismatchError, ManifestError, MissingFileError

DEPTH_SCALE = 1000.0
DEPTH_MAX = 65535


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"File not found: {path}")
    return path.read_bytes()


def _parse_header(data: bytes, path) -> tuple[str, int, int, int, int]:
    """Magic, width, height, maxval and payload offset of a netpbm file."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ManifestError(f"{path}: truncated netpbm header")
        tokens.append(data[start:pos])
    try:
        magic = tokens[0].decode("ascii")
        width, height, maxval = (int(t) for t in tokens[1:])
    except (UnicodeDecodeError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed netpbm header") from exc
    # exactly one whitespace byte separates the header from the raster
    return magic, width, height, maxval, pos + 1


def load_ppm(path: str | Path) -> np.ndarray:
    """8-bit P6 image as an (H, W, 3) uint8 array."""
    data = _read_bytes(path)
    magic, w, h, maxval, offset = _parse_header(data, path)
    if magic != "P6" or maxval != 255:
        raise ManifestError(f"{path}: expected an 8-bit P6 image, got {magic} maxval={maxval}")
    raster = np.frombuffer(data, dtype=np.uint8, offset=offset)
    if raster.size != w * h * 3:
        raise DimensionMismatchError(f"{path}: raster holds {raster.size} bytes, header says {w}x{h}x3")
    return raster.reshape(h, w, 3).copy()


def save_ppm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DimensionMismatchError(f"PPM payload must be (H, W, 3) uint8, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def load_pgm(path: str | Path) -> np.ndarray:
    """P5 map; 8-bit as uint8, 16-bit (big-endian) as uint16."""
    data = _read_bytes(path)
    magic, w, h, maxval, offset = _parse_header(data, path)
    if magic != "P5" or maxval not in (255, 65535):
        raise ManifestError(f"{path}: expected a P5 map with maxval 255 or 65535, got {magic} maxval={maxval}")
    dtype = np.dtype(np.uint8) if maxval == 255 else np.dtype(">u2")
    raster = np.frombuffer(data, dtype=dtype, offset=offset)
    if raster.size != w * h:
        raise DimensionMismatchError(f"{path}: raster holds {raster.size} samples, header says {w}x{h}")
    return raster.reshape(h, w).astype(np.uint8 if maxval == 255 else np.uint16)


def save_pgm(path: str | Path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 2 or values.dtype not in (np.uint8, np.uint16):
        raise DimensionMismatchError(f"PGM payload must be 2D uint8/uint16, got {values.shape} {values.dtype}")
    h, w = values.shape
    maxval = 255 if values.dtype == np.uint8 else 65535
    raster = values.astype(">u2").tobytes() if maxval == 65535 else values.tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + raster)


def quantize_image(rgb: np.ndarray) -> np.ndarray:
    """(3, H, W) floats in [0, 1] -> (H, W, 3) uint8."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    return np.rint(np.moveaxis(rgb, 0, -1) * 255.0).astype(np.uint8)


def dequantize_image(image: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.asarray(image, dtype=np.float64) / 255.0, -1, 0)


def quantize_depth(depth: np.ndarray) -> np.ndarray:
    """Depth in scene units -> uint16 thousandths; 0 stays invalid."""
    scaled = np.rint(np.asarray(depth, dtype=np.float64) * DEPTH_SCALE)
    return np.clip(np.nan_to_num(scaled, nan=0.0), 0, DEPTH_MAX).astype(np.uint16)


def dequantize_depth(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) / DEPTH_SCALE
