"""
SSRF checkpoint files

Layout (all integers little-endian)::

    b"SSRF" | u32 version | u32 entry count
    per entry: u32 name length | UTF-8 name | u8 rank | rank x u32 dims | float32 payload
    u32 CRC32 of every preceding byte

Field parameters are stored as ``param/<name>`` entries. Metadata (config
document, object id, placement, conditioning camera, epoch, seed) travels as
``meta/<name>`` float32 arrays; text is stored one byte per element.
"""

import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from app.exceptions import DataError, ShapeMismatchError
from app.models.config import ModelConfig, RunConfig
from app.models.geometry import Aabb, Camera, SimilarityTransform
from app.models.scene import SceneInstance
from app.services.autodiff import ParamStore
from app.services.field_model import ObjectField, check_param_shapes

logger = logging.getLogger(__name__)

MAGIC = b"SSRF"
VERSION = 1
PARAM_PREFIX = "param/"
META_PREFIX = "meta/"


@dataclass
class Checkpoint:
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION


@dataclass
class CheckpointInfo:
    """Everything stored next to the parameters"""

    object_id: str
    config: RunConfig
    config_hash: str
    transform: SimilarityTransform
    bbox: Aabb
    epoch: int
    seed: int


# --- raw format --------------------------------------------------------------------

def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", checkpoint.version, len(checkpoint.arrays))]
    for name, array in checkpoint.arrays.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array, dtype="<f4")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise DataError(f"Truncated checkpoint {self.path}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, path: str = "<memory>") -> Checkpoint:
    if len(data) < 16 or data[:4] != MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise DataError(f"Checkpoint {path} failed its CRC check")

    reader = _Reader(body, path)
    reader.take(4)
    version, count = reader.unpack("<II")
    if version != VERSION:
        raise DataError(f"Checkpoint {path} has unsupported version {version} (expected {VERSION})")
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (length,) = reader.unpack("<I")
        try:
            name = reader.take(length).decode("utf-8")
        except UnicodeDecodeError:
            raise DataError(f"Checkpoint {path} has an entry name that is not UTF-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) * 4
        arrays[name] = np.frombuffer(reader.take(size), dtype="<f4").reshape(shape).copy()
    if reader.pos != len(body):
        raise DataError(f"Checkpoint {path} has {len(body) - reader.pos} trailing bytes")
    return Checkpoint(arrays, version)


def write_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(encode_checkpoint(checkpoint))
    logger.info(f"Wrote checkpoint {path} ({len(checkpoint.arrays)} arrays)")


def read_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise DataError(f"Checkpoint not found: {path}")
    with open(path, "rb") as handle:
        return decode_checkpoint(handle.read(), path)


# --- metadata encoding -------------------------------------------------------------

def _text_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _array_text(array: np.ndarray) -> str:
    return bytes(np.asarray(array).astype(np.uint8).tolist()).decode("utf-8")


def _orthonormal(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation to a float32-rounded matrix"""
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=np.float64))
    return u @ vt


def _transform_array(t: SimilarityTransform) -> np.ndarray:
    return np.concatenate([t.rotation.ravel(), t.translation, [t.scale]])


def _array_transform(array: np.ndarray) -> SimilarityTransform:
    array = np.asarray(array, dtype=np.float64)
    return SimilarityTransform(_orthonormal(array[:9].reshape(3, 3)), array[9:12], float(array[12]))


def _camera_array(camera: Camera) -> np.ndarray:
    intrinsics = [camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height]
    return np.concatenate([intrinsics, camera.rotation.ravel(), camera.position])


def _array_camera(array: np.ndarray) -> Camera:
    array = np.asarray(array, dtype=np.float64)
    fx, fy, cx, cy, width, height = array[:6]
    return Camera(fx, fy, cx, cy, int(width), int(height), _orthonormal(array[6:15].reshape(3, 3)), array[15:18])


def _meta(arrays: Dict[str, np.ndarray], name: str, path: str) -> np.ndarray:
    key = META_PREFIX + name
    if key not in arrays:
        raise DataError(f"Checkpoint {path} is missing {key}")
    return arrays[key]


# --- fields ------------------------------------------------------------------------

def save_field(path: str, field: ObjectField, config: RunConfig, epoch: int,
               transform: Optional[SimilarityTransform] = None) -> None:
    """
    Write a trained field with its run metadata

    Args:
        path: Output .ssr path
        field: Trained object field
        config: Run configuration the field was trained with
        epoch: Last completed epoch
        transform: World placement of the object (identity when omitted)
    """
    arrays = {PARAM_PREFIX + name: value for name, value in field.params.params.items()}
    arrays.update({
        META_PREFIX + "config": _text_array(config.canonical_json()),
        META_PREFIX + "config_hash": _text_array(config.config_hash()),
        META_PREFIX + "object_id": _text_array(field.object_id),
        META_PREFIX + "bbox": np.stack([field.bbox.min, field.bbox.max]),
        META_PREFIX + "transform": _transform_array(transform or SimilarityTransform.identity()),
        META_PREFIX + "camera": _camera_array(field.camera),
        META_PREFIX + "epoch": np.array([epoch]),
        META_PREFIX + "seed": _text_array(str(config.seed)),
    })
    write_checkpoint(path, Checkpoint(arrays))


def _stored_seed(arrays, path: str) -> int:
    text = _array_text(_meta(arrays, "seed", path))
    if not text.isdigit():
        raise DataError(f"Checkpoint {path} carries an invalid seed {text!r}")
    return int(text)


def load_field(path: str, model_config: Optional[ModelConfig] = None):
    """
    Read a field checkpoint

    Args:
        path: Checkpoint path
        model_config: Expected network layout; defaults to the stored config

    Returns:
        (ObjectField, CheckpointInfo)
    """
    arrays = read_checkpoint(path).arrays
    try:
        config = RunConfig.model_validate(json.loads(_array_text(_meta(arrays, "config", path))))
    except (ValueError, UnicodeDecodeError) as e:
        raise DataError(f"Checkpoint {path} carries an invalid config: {e}")
    stored_hash = _array_text(_meta(arrays, "config_hash", path))
    if stored_hash != config.config_hash():
        raise DataError(f"Checkpoint {path} config does not match its stored hash")

    params = {
        name[len(PARAM_PREFIX):]: value.astype(np.float64)
        for name, value in arrays.items() if name.startswith(PARAM_PREFIX)
    }
    model = model_config or config.model
    check_param_shapes(model, params)
    bbox_array = _meta(arrays, "bbox", path).astype(np.float64)
    if bbox_array.shape != (2, 3):
        raise ShapeMismatchError(f"meta/bbox has shape {bbox_array.shape}", name="meta/bbox")
    bbox = Aabb(bbox_array[0], bbox_array[1])
    object_id = _array_text(_meta(arrays, "object_id", path))
    field = ObjectField(model, ParamStore(params), _array_camera(_meta(arrays, "camera", path)), bbox, object_id)
    info = CheckpointInfo(
        object_id=object_id, config=config, config_hash=stored_hash,
        transform=_array_transform(_meta(arrays, "transform", path)), bbox=bbox,
        epoch=int(_meta(arrays, "epoch", path)[0]), seed=_stored_seed(arrays, path),
    )
    logger.info(f"Loaded field {object_id} from {path} (epoch {info.epoch})")
    return field, info


def load_instance(path: str, object_id: Optional[str] = None) -> SceneInstance:
    """Scene instance at its stored placement; ``object_id`` must match when given"""
    field, info = load_field(path)
    if object_id is not None and object_id != info.object_id:
        raise DataError(f"Checkpoint {path} holds object {info.object_id}, not {object_id}")
    return SceneInstance(info.object_id, field, info.transform)
