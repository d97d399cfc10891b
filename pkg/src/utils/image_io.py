"""Frame and mask I/O: binary PGM/PPM and a raw planar grayscale format.

Raw files start with one text line ``AUTOCALIB-RAW <width> <height> <dtype>``
followed by row-major samples; ``dtype`` is ``u8``, ``u16`` or ``f32``
(little endian).
"""

import re
from pathlib import Path

import numpy as np

from src.core.edgelet import RasterImage
from src.core.errors import SchemaError
from src.utils.paths import atomic_write_bytes

RAW_MAGIC = "AUTOCALIB-RAW"
_RAW_DTYPES = {"u8": "<u1", "u16": "<u2", "f32": "<f4"}
_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _pnm_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        match = _TOKEN.match(data, pos)
        if match is None:
            raise SchemaError("truncated PNM header")
        tokens.append(match.group(2))
        pos = match.end()
    # Exactly one whitespace byte separates the header from the samples
    return tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3]), pos + 1


def read_pnm(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) into floats in [0, 1].

    PPM frames are converted to luma.
    """
    data = Path(path).read_bytes()
    try:
        magic, width, height, maxval, offset = _pnm_header(data)
    except ValueError as e:
        raise SchemaError(f"{path}: bad PNM header") from e
    if magic not in (b"P5", b"P6"):
        raise SchemaError(f"{path}: unsupported PNM type {magic!r}")
    channels = 3 if magic == b"P6" else 1
    dtype = ">u2" if maxval > 255 else "u1"
    count = width * height * channels
    samples = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    image = samples.astype(float).reshape(height, width, channels) / maxval
    if channels == 3:
        return image @ np.array([0.299, 0.587, 0.114])
    return image[:, :, 0]


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write an 8-bit (uint8 or floats in [0, 1]) or 16-bit (uint16) PGM."""
    img = np.asarray(image)
    if img.dtype == np.uint16:
        maxval, body = 65535, img.astype(">u2").tobytes()
    elif img.dtype == np.uint8:
        maxval, body = 255, img.tobytes()
    else:
        scaled = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        maxval, body = 255, scaled.tobytes()
    h, w = img.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n{maxval}\n".encode() + body)


def read_raw(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise SchemaError(f"{path}: missing raw header")
    parts = data[:newline].decode("ascii", errors="replace").split()
    if len(parts) != 4 or parts[0] != RAW_MAGIC or parts[3] not in _RAW_DTYPES:
        raise SchemaError(f"{path}: bad raw header {data[:newline]!r}")
    width, height = int(parts[1]), int(parts[2])
    dtype = np.dtype(_RAW_DTYPES[parts[3]])
    samples = np.frombuffer(
        data, dtype=dtype, count=width * height, offset=newline + 1
    )
    image = samples.reshape(height, width).astype(float)
    if parts[3] == "u8":
        image /= 255.0
    elif parts[3] == "u16":
        image /= 65535.0
    return image


def write_raw(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype="<f4")
    h, w = img.shape
    atomic_write_bytes(path, f"{RAW_MAGIC} {w} {h} f32\n".encode() + img.tobytes())


def read_frame(path: str | Path) -> np.ndarray:
    if Path(path).suffix == ".raw":
        return read_raw(path)
    return read_pnm(path)


def load_frames(
    frames_dir: str | Path, masks_dir: str | Path | None = None
) -> list[RasterImage]:
    """Frames sorted by file name, each paired with a same-named mask if present."""
    frames_dir = Path(frames_dir)
    paths = sorted(
        p for p in frames_dir.iterdir() if p.suffix in (".pgm", ".ppm", ".raw")
    )
    images = []
    for path in paths:
        mask = None
        if masks_dir is not None:
            mask_path = Path(masks_dir) / f"{path.stem}.pgm"
            if mask_path.exists():
                mask = read_pnm(mask_path) > 0.5
        images.append(RasterImage(read_frame(path), mask))
    return images
