"""
Ground-truth view directories written by gen-data

    views.json
    view_000_color.ppm  view_000_depth.pfm  view_000_normal.pfm
    view_000_mask_<object>.pgm (one per object)
"""

import json
import logging
import os
from typing import List, Sequence

import numpy as np

from app.exceptions import DataError
from app.models.geometry import Camera
from app.services.ground_truth import GroundTruthView
from app.storage.images import read_image, write_image

logger = logging.getLogger(__name__)

INDEX_FILE = "views.json"


def _view_files(index: int, object_ids: Sequence[str]) -> dict:
    stem = f"view_{index:03d}"
    return {
        "color": f"{stem}_color.ppm",
        "depth": f"{stem}_depth.pfm",
        "normal": f"{stem}_normal.pfm",
        "masks": {oid: f"{stem}_mask_{oid}.pgm" for oid in object_ids},
    }


def save_views(directory: str, views: Sequence[GroundTruthView], scene: str = "") -> str:
    """Write every view's images plus the views.json index; returns the index path"""
    if not views:
        raise DataError("No views to save")
    object_ids = list(views[0].object_ids)
    os.makedirs(directory, exist_ok=True)
    entries = []
    for index, view in enumerate(views):
        files = _view_files(index, object_ids)
        write_image(os.path.join(directory, files["color"]), "color", view.color)
        write_image(os.path.join(directory, files["depth"]), "depth", view.depth)
        write_image(os.path.join(directory, files["normal"]), "normal", view.normal)
        for oid, name in files["masks"].items():
            write_image(os.path.join(directory, name), "mask", view.mask(oid))
        entries.append({"index": index, "camera": view.camera.to_dict(), **files})

    index_path = os.path.join(directory, INDEX_FILE)
    with open(index_path, "w", encoding="utf-8") as handle:
        json.dump({"scene": scene, "object_ids": object_ids, "views": entries}, handle, indent=2, sort_keys=True)
    logger.info(f"Saved {len(views)} views of {object_ids} to {directory}")
    return index_path


def load_views(directory: str) -> List[GroundTruthView]:
    index_path = os.path.join(directory, INDEX_FILE)
    if not os.path.exists(index_path):
        raise DataError(f"No {INDEX_FILE} in {directory}")
    try:
        with open(index_path, "r", encoding="utf-8") as handle:
            index = json.load(handle)
        object_ids = tuple(index["object_ids"])
        entries = index["views"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"Malformed {index_path}: {e}")

    views = []
    for number, entry in enumerate(entries):
        path = lambda name: os.path.join(directory, name)
        try:
            view_id = entry.get("index", number)
            files = {kind: path(entry[kind]) for kind in ("color", "depth", "normal")}
            masks = {oid: path(entry["masks"][oid]) for oid in object_ids}
            camera = Camera.from_dict(entry["camera"])
        except (KeyError, TypeError, AttributeError, ValueError) as e:
            raise DataError(f"Malformed view {number} in {index_path}: missing or invalid {e}")
        color = read_image(files["color"], "color")
        depth = read_image(files["depth"], "depth").astype(np.float64)
        normal = read_image(files["normal"], "normal").astype(np.float64)
        labels = np.full(depth.shape, -1, dtype=np.int64)
        for label, oid in enumerate(object_ids):
            mask = read_image(masks[oid], "mask")
            if mask.shape != depth.shape:
                raise DataError(f"Mask for {oid} in view {view_id} does not match the depth size")
            labels[mask] = label
        if color.shape[:2] != (camera.height, camera.width):
            raise DataError(f"View {view_id} images do not match the camera resolution")
        views.append(GroundTruthView(camera, color, depth, normal, labels, object_ids))
    logger.info(f"Loaded {len(views)} views from {directory}")
    return views
