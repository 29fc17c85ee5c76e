"""Image and noise-map conventions plus netpbm (PPM/PGM) readers and writers.

A color image is a ``(h, w, 3)`` uint8 array. A noise map is an ``(h, w)``
array: boolean for ground truth and detections, float in [0, 1] for the
detector's probability output.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError


def as_color_image(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"expected an (h, w, 3) color image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractError("image must have at least one pixel")
    if arr.dtype != np.uint8:
        if np.any((arr < 0) | (arr > 255)) or not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ContractError("color image values must be integers in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def as_binary_map(noise_map, shape: tuple[int, int] | None = None) -> np.ndarray:
    arr = np.asarray(noise_map)
    if arr.ndim != 2:
        raise ContractError(f"noise map must be 2-d, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ContractError(f"noise map shape {arr.shape} does not match image {tuple(shape)}")
    if arr.dtype != bool:
        if not np.all((arr == 0) | (arr == 1)):
            raise ContractError("noise map must be binary (0/1)")
        arr = arr.astype(bool)
    return arr


# -- netpbm ------------------------------------------------------------------


def _parse_header(data: bytes, magic: bytes, path) -> tuple[list[int], int]:
    """Return the three header integers and the offset of the raster."""
    if data[:2] != magic:
        raise FormatError(f"{path}: expected netpbm magic {magic.decode()}, got {data[:2]!r}")
    fields: list[int] = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        if pos >= n:
            raise FormatError(f"{path}: truncated header")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError(f"{path}: truncated header comment")
            pos = end + 1
        elif ch.isdigit():
            start = pos
            while pos < n and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise FormatError(f"{path}: unexpected byte {ch!r} in header")
    if pos >= n or not data[pos:pos + 1].isspace():
        raise FormatError(f"{path}: header must end with a single whitespace byte")
    return fields, pos + 1


def decode_ppm(data: bytes, path="<bytes>") -> np.ndarray:
    (w, h, maxval), offset = _parse_header(data, b"P6", path)
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM (maxval 255) is supported, got maxval {maxval}")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: empty image {w}x{h}")
    need = w * h * 3
    raster = data[offset:offset + need]
    if len(raster) < need:
        raise FormatError(f"{path}: truncated raster ({len(raster)} of {need} bytes)")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def encode_ppm(image) -> bytes:
    img = as_color_image(image)
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def load_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes(), path)


def save_ppm(image, path) -> None:
    Path(path).write_bytes(encode_ppm(image))


def decode_pgm(data: bytes, path="<bytes>") -> np.ndarray:
    """8-bit or 16-bit (big-endian) binary graymap as uint8/uint16."""
    (w, h, maxval), offset = _parse_header(data, b"P5", path)
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid maxval {maxval}")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: empty image {w}x{h}")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    raster = data[offset:offset + need]
    if len(raster) < need:
        raise FormatError(f"{path}: truncated raster ({len(raster)} of {need} bytes)")
    return np.frombuffer(raster, dtype=dtype).reshape(h, w).astype(dtype.newbyteorder("="))


def encode_pgm(gray: np.ndarray, maxval: int = 255) -> bytes:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ContractError(f"graymap must be 2-d, got shape {gray.shape}")
    h, w = gray.shape
    dtype = "u1" if maxval < 256 else ">u2"
    return b"P5\n%d %d\n%d\n" % (w, h, maxval) + np.ascontiguousarray(gray, dtype=dtype).tobytes()


def save_map(noise_map, path) -> None:
    """Binary map as an 8-bit PGM holding 0 and 255."""
    m = as_binary_map(noise_map)
    Path(path).write_bytes(encode_pgm(m.astype(np.uint8) * 255))


def load_map(path) -> np.ndarray:
    """Binary map from a PGM; any nonzero sample counts as flagged."""
    return decode_pgm(Path(path).read_bytes(), path) > 0


def save_probability_map(prob, path) -> None:
    """Probability map as a 16-bit PGM, value = round(65535 * p)."""
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 2 or np.any((p < 0) | (p > 1)):
        raise ContractError("probability map must be 2-d with values in [0, 1]")
    Path(path).write_bytes(encode_pgm(np.floor(p * 65535 + 0.5).astype(np.uint16), 65535))


def load_probability_map(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes(), path).astype(np.float64) / 65535.0


def load_image(path) -> np.ndarray:
    """Load a color image; PPM natively, anything else through Pillow."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return load_ppm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise FormatError(f"{path}: non-PPM input needs Pillow (pip install idcnn-switch[png])") from exc
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
