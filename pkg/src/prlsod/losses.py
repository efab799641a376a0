"""Supervision losses: SDM regression, direction-field regression, and the
direction-aware smoothness loss on the saliency map, plus their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .geometry import DirectionField, SignedDistanceMap, as_mask
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    alpha_edge: float = 10.0
    psi_eps: float = 1e-3
    df_angle_eps: float = 1e-6
    w_max: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "psi_eps", "df_angle_eps", "w_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.alpha_edge <= 0:
            raise ValueError("alpha_edge must be positive")
        if self.psi_eps <= 0 or self.w_max <= 0:
            raise ValueError("psi_eps and w_max must be positive")


def _plane(t: Tensor) -> Tensor:
    if t.ndim == 3 and t.shape[-1] == 1:
        return t.reshape(t.shape[:2])
    if t.ndim != 2:
        raise K.ShapeError(f"expected an (H, W) or (H, W, 1) map, got {t.shape}")
    return t


def _field_array(target) -> np.ndarray:
    if isinstance(target, DirectionField):
        return target.as_array()
    return np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)


def loss_sdm(pred: Tensor, target) -> Tensor:
    """Sum of squared differences against the (normalized) target SDM."""
    pred = _plane(as_tensor(pred))
    tgt = target.normalized if isinstance(target, SignedDistanceMap) else np.asarray(target, dtype=np.float64)
    tgt = tgt.reshape(tgt.shape[:2]) if tgt.ndim == 3 else tgt
    if tgt.shape != pred.shape:
        raise K.ShapeError(f"loss_sdm: pred {pred.shape} vs target {tgt.shape}")
    return K.square(pred - tgt).sum()


def loss_df(pred: Tensor, target, angle_eps: float = 1e-6) -> Tensor:
    """Per pixel ``||F - F_gt|| + acos(<F, F_gt>/(|F||F_gt|))**2``, summed.

    The angle term is 0 wherever either vector is shorter than ``angle_eps``.
    """
    pred = as_tensor(pred)
    tgt = _field_array(target)
    if pred.shape != tgt.shape or pred.shape[-1] != 2:
        raise K.ShapeError(f"loss_df: pred {pred.shape} vs target {tgt.shape}")
    dist = K.norm(pred - tgt).sum()

    n_pred = K.norm(pred)
    n_tgt = np.sqrt((tgt * tgt).sum(axis=-1))
    valid = (n_pred.data >= angle_eps) & (n_tgt >= angle_eps)
    dot = (pred * tgt).sum(axis=-1)
    denom = n_pred * np.where(valid, n_tgt, 1.0) + np.where(valid, 0.0, 1.0)
    angle = K.acos_sq(dot / denom) * valid
    return dist + angle.sum()


def smoothness_weights(gt, gt_field, w_max: float = 1.0) -> np.ndarray:
    """``min(1/max(|F_gt(p)|, 1), w_max)`` on the object, 1 on background.

    Boundary pixels have a zero field, so the inner clamp keeps them finite.
    """
    fg = as_mask(gt)
    mag = gt_field.magnitude() if isinstance(gt_field, DirectionField) else np.linalg.norm(_field_array(gt_field), axis=-1)
    w_obj = np.minimum(1.0 / np.maximum(mag, 1.0), w_max)
    return np.where(fg, w_obj, 1.0)


def loss_ds(pred: Tensor, gt, gt_field, weights: LossWeights = LossWeights()) -> Tensor:
    """Direction-aware smoothness loss on forward differences of the saliency map.

    Each x/y difference at pixel p costs ``w(p) * psi(|dO| * exp(-alpha |dG|))``
    with ``psi(m) = sqrt(m^2 + eps^2)``; differences that would leave the grid
    are omitted.
    """
    pred = _plane(as_tensor(pred))
    G = as_mask(gt).astype(np.float64)
    if G.shape != pred.shape:
        raise K.ShapeError(f"loss_ds: pred {pred.shape} vs gt {G.shape}")
    w = smoothness_weights(G, gt_field, weights.w_max)
    if w.shape != G.shape:
        raise K.ShapeError(f"loss_ds: field {w.shape} vs gt {G.shape}")
    eps2 = weights.psi_eps**2
    a = weights.alpha_edge

    dx = pred[:, 1:] - pred[:, :-1]
    ex = np.exp(-2.0 * a * np.abs(G[:, 1:] - G[:, :-1]))
    term_x = K.sqrt(K.square(dx) * ex + eps2) * w[:, :-1]

    dy = pred[1:, :] - pred[:-1, :]
    ey = np.exp(-2.0 * a * np.abs(G[1:, :] - G[:-1, :]))
    term_y = K.sqrt(K.square(dy) * ey + eps2) * w[:-1, :]
    return term_x.sum() + term_y.sum()


def loss_prl(sal_loss, sdm_loss, df_loss, weights: LossWeights = LossWeights()):
    """``L_sal + lambda1 * L_sdm + lambda2 * L_df``; accepts tensors or floats."""
    return sal_loss + weights.lambda1 * sdm_loss + weights.lambda2 * df_loss
