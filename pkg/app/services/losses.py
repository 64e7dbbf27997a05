"""
Training losses on the autodiff tape

Each loss is a sum (the optimized quantity); callers divide by counts for the
logged means. Plain arrays are accepted in place of Vars and evaluated on a
no-grad tape.
"""

import logging
from typing import Tuple

import numpy as np

from app.exceptions import ShapeMismatchError
from app.services import autodiff as ad
from app.services.autodiff import Tape, Var

logger = logging.getLogger(__name__)


def _as_var(value, tape: Tape = None) -> Var:
    if isinstance(value, Var):
        return value
    return (tape or Tape(requires_grad=False)).const(value)


def loss_3d(pred, true) -> Var:
    """Sum of |s - s_hat|"""
    pred = _as_var(pred)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ShapeMismatchError(f"3D loss got {pred.shape} predictions for {true.shape} targets", name="sdf")
    return ad.reduce_sum(ad.absolute(ad.sub(pred, true)))


def loss_rgb(pred, true, mask=None) -> Tuple[Var, bool]:
    """Sum over masked rays of the channel-summed L1 color error, plus a supervision flag"""
    pred = _as_var(pred)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ShapeMismatchError(f"Color loss got {pred.shape} predictions for {true.shape} targets", name="color")
    weight = _mask_weight(mask, len(true))
    if not np.any(weight):
        logger.warning("Color loss has no visible pixels to supervise")
        return ad.reduce_sum(ad.mul(ad.absolute(ad.sub(pred, true)), 0.0)), False
    error = ad.reduce_sum(ad.absolute(ad.sub(pred, true)), axis=-1)
    return ad.reduce_sum(ad.mul(error, weight)), True


def loss_geometric(pred_depth, true_depth, pred_normal, true_normal, mask=None) -> Tuple[Var, Var]:
    """Depth L2 and normal (L1 + angular) sums over masked rays

    The angular term compares against the normalized rendered normal; the L1
    term uses the raw composited one.
    """
    pred_depth = _as_var(pred_depth)
    pred_normal = _as_var(pred_normal, pred_depth.tape)
    true_depth = np.asarray(true_depth, dtype=np.float64)
    true_normal = np.asarray(true_normal, dtype=np.float64)
    if pred_depth.shape != true_depth.shape:
        raise ShapeMismatchError("Depth prediction and target differ in shape", name="depth")
    if pred_normal.shape != true_normal.shape:
        raise ShapeMismatchError("Normal prediction and target differ in shape", name="normal")
    weight = _mask_weight(mask, len(true_depth))

    depth = ad.reduce_sum(ad.mul(ad.square(ad.sub(pred_depth, true_depth)), weight))
    l1 = ad.reduce_sum(ad.absolute(ad.sub(pred_normal, true_normal)), axis=-1)
    length = ad.sqrt(ad.reduce_sum(ad.square(pred_normal), axis=-1))
    unit = ad.div(pred_normal, ad.reshape(ad.maximum(length, 1e-8), (len(true_depth), 1)))
    angular = ad.absolute(ad.sub(1.0, ad.dot(unit, true_normal)))
    normal = ad.reduce_sum(ad.mul(ad.add(l1, angular), weight))
    return depth, normal


def _mask_weight(mask, count: int) -> np.ndarray:
    if mask is None:
        return np.ones(count)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if len(mask) != count:
        raise ShapeMismatchError(f"Mask has {len(mask)} entries for {count} rays", name="mask")
    return mask.astype(np.float64)
