"""
Image files: PPM (color), PFM (depth and normals) and PGM (masks)

Color images are floats in [0, 1] quantized to 8 bits. PFM stores float32
little-endian rows bottom to top with scale -1. Masks are 0/255 bytes.
"""

import logging
import os
from typing import List, Tuple

import numpy as np

from app.exceptions import DataError, ShapeMismatchError

logger = logging.getLogger(__name__)

IMAGE_KINDS = ("color", "depth", "normal", "mask")


def _read_bytes(path: str) -> bytes:
    if not os.path.exists(path):
        raise DataError(f"Image not found: {path}")
    with open(path, "rb") as handle:
        return handle.read()


def _write_bytes(path: str, header: str, payload: bytes) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(header.encode("ascii"))
        handle.write(payload)


def _parse_header(data: bytes, count: int, path: str) -> Tuple[List[str], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments

    Returns the tokens and the offset just past the single whitespace byte
    that ends the header.
    """
    tokens: List[str] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DataError(f"Truncated image header in {path}")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii", errors="replace"))
    if pos >= len(data) and count:
        raise DataError(f"Image {path} has a header but no payload")
    return tokens, pos + 1


def _dimensions(tokens: List[str], path: str) -> Tuple[int, int]:
    try:
        width, height = int(tokens[1]), int(tokens[2])
    except ValueError:
        raise DataError(f"Malformed image dimensions in {path}")
    if width < 1 or height < 1:
        raise DataError(f"Image {path} has non-positive dimensions {width}x{height}")
    return width, height


def _payload(data: bytes, offset: int, size: int, path: str) -> bytes:
    payload = data[offset:offset + size]
    if len(payload) < size:
        raise DataError(f"Truncated payload in {path}: expected {size} bytes, found {len(payload)}")
    return payload


# --- PPM ---------------------------------------------------------------------------

def quantize(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: str, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"Color image must be (H, W, 3), got {image.shape}", name="color")
    height, width = image.shape[:2]
    _write_bytes(path, f"P6\n{width} {height}\n255\n", quantize(image).tobytes())


def read_ppm(path: str) -> np.ndarray:
    data = _read_bytes(path)
    tokens, offset = _parse_header(data, 4, path)
    if tokens[0] != "P6":
        raise DataError(f"{path} is not a binary PPM (magic {tokens[0]!r})")
    width, height = _dimensions(tokens, path)
    if tokens[3] != "255":
        raise DataError(f"Only 8-bit PPM is supported, {path} declares maxval {tokens[3]}")
    pixels = np.frombuffer(_payload(data, offset, width * height * 3, path), dtype=np.uint8)
    return pixels.reshape(height, width, 3).astype(np.float64) / 255.0


# --- PGM ---------------------------------------------------------------------------

def write_pgm(path: str, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeMismatchError(f"Mask must be (H, W), got {mask.shape}", name="mask")
    height, width = mask.shape
    payload = np.where(mask.astype(bool), 255, 0).astype(np.uint8).tobytes()
    _write_bytes(path, f"P5\n{width} {height}\n255\n", payload)


def read_pgm(path: str) -> np.ndarray:
    """Mask as a boolean image; any value of at least 128 counts as set"""
    data = _read_bytes(path)
    tokens, offset = _parse_header(data, 4, path)
    if tokens[0] != "P5":
        raise DataError(f"{path} is not a binary PGM (magic {tokens[0]!r})")
    width, height = _dimensions(tokens, path)
    if tokens[3] != "255":
        raise DataError(f"Only 8-bit PGM is supported, {path} declares maxval {tokens[3]}")
    pixels = np.frombuffer(_payload(data, offset, width * height, path), dtype=np.uint8)
    return pixels.reshape(height, width) >= 128


# --- PFM ---------------------------------------------------------------------------

def write_pfm(path: str, image: np.ndarray) -> None:
    """(H, W) images become grayscale 'Pf', (H, W, 3) images color 'PF'"""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        magic = "Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = "PF"
    else:
        raise ShapeMismatchError(f"PFM image must be (H, W) or (H, W, 3), got {image.shape}", name="pfm")
    height, width = image.shape[:2]
    payload = np.ascontiguousarray(image[::-1]).astype("<f4").tobytes()
    _write_bytes(path, f"{magic}\n{width} {height}\n-1.0\n", payload)


def read_pfm(path: str) -> np.ndarray:
    data = _read_bytes(path)
    tokens, offset = _parse_header(data, 4, path)
    if tokens[0] not in ("Pf", "PF"):
        raise DataError(f"{path} is not a PFM file (magic {tokens[0]!r})")
    width, height = _dimensions(tokens, path)
    try:
        scale = float(tokens[3])
    except ValueError:
        raise DataError(f"Malformed PFM scale in {path}")
    if scale >= 0:
        raise DataError(f"{path} is big-endian (positive scale); only little-endian PFM is supported")
    channels = 3 if tokens[0] == "PF" else 1
    count = width * height * channels
    values = np.frombuffer(_payload(data, offset, 4 * count, path), dtype="<f4")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return values.reshape(shape)[::-1].astype(np.float32)


# --- by kind -----------------------------------------------------------------------

def write_image(path: str, kind: str, image: np.ndarray) -> None:
    if kind == "color":
        write_ppm(path, image)
    elif kind in ("depth", "normal"):
        expected = 2 if kind == "depth" else 3
        if np.ndim(image) != expected:
            raise ShapeMismatchError(f"{kind} image has {np.ndim(image)} dimensions", name=kind)
        write_pfm(path, image)
    elif kind == "mask":
        write_pgm(path, image)
    else:
        raise DataError(f"Unknown image kind: {kind}")
    logger.debug(f"Wrote {kind} image {path}")


def read_image(path: str, kind: str) -> np.ndarray:
    if kind == "color":
        return read_ppm(path)
    if kind in ("depth", "normal"):
        image = read_pfm(path)
        if (kind == "depth") != (image.ndim == 2):
            raise ShapeMismatchError(f"{path} does not hold a {kind} image", name=kind)
        return image
    if kind == "mask":
        return read_pgm(path)
    raise DataError(f"Unknown image kind: {kind}")
