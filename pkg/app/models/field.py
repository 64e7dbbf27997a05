"""
Value types exchanged with radiance fields
"""

from dataclasses import dataclass

import numpy as np

from app.exceptions import DataError
from app.models.geometry import Camera


@dataclass(frozen=True)
class Conditioning:
    """Instance latent (d_ins,) plus a feature image (Hf, Wf, d_pix) seen from ``camera``

    The camera is expressed in the object's canonical frame.
    """

    latent: np.ndarray
    features: np.ndarray
    camera: Camera

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 3 or features.shape[0] < 2 or features.shape[1] < 2:
            raise DataError(f"Feature image must be at least 2x2, got shape {features.shape}")
        latent = np.asarray(self.latent, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(latent))):
            raise DataError("Conditioning contains non-finite values")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "latent", latent)

    @property
    def grid_shape(self):
        return self.features.shape[:2]


@dataclass(frozen=True)
class FieldSample:
    """Field outputs at N canonical points

    ``normal`` is unit length in the canonical frame; rows flagged
    ``degenerate`` carry the +z fallback.
    """

    sdf: np.ndarray
    color: np.ndarray
    normal: np.ndarray
    degenerate: np.ndarray
    out_of_view: np.ndarray

    def __len__(self) -> int:
        return len(self.sdf)
