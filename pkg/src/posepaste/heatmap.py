"""Ground-truth heatmap rendering and the squared-error heatmap loss.

A heatmap stack is one (K, h, w) array at 1/stride of the input
resolution.  Targets are unnormalized Gaussians with peak value 1.0 at
the joint's nearest heatmap grid pixel, truncated at 3 sigma; joints
without an annotation render as all-zero maps and are masked out of the
loss.  The loss reduces by *mean* over the masked-in pixels so its scale
is independent of resolution and joint count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass
class HeatmapStack:
    maps: np.ndarray  # (K, h, w)
    stride: int

    @property
    def num_joints(self) -> int:
        return self.maps.shape[0]


def render_gaussian(keypoints: np.ndarray, dims: tuple[int, int], stride: int,
                    sigma: float) -> HeatmapStack:
    """Render per-joint Gaussian targets.

    ``keypoints`` is (K, 4): x, y, visible flag, annotated flag, in input
    pixels.  Occluded-but-annotated joints are rendered like visible ones;
    unannotated joints (or joints falling outside the map) give zero maps.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    keypoints = np.asarray(keypoints, dtype=np.float64)
    h, w = int(dims[0]), int(dims[1])
    K = keypoints.shape[0]
    maps = np.zeros((K, h, w), dtype=np.float64)
    uu = np.arange(w, dtype=np.float64)
    vv = np.arange(h, dtype=np.float64)
    r2_cut = (3.0 * sigma) ** 2
    for k in range(K):
        x, y, _, annotated = keypoints[k]
        if annotated == 0:
            continue
        cu = int(np.floor(x / stride + 0.5))
        cv = int(np.floor(y / stride + 0.5))
        if not (0 <= cu < w and 0 <= cv < h):
            continue
        d2 = (uu[None, :] - cu) ** 2 + (vv[:, None] - cv) ** 2
        g = np.exp(-d2 / (2.0 * sigma * sigma))
        g[d2 > r2_cut] = 0.0
        maps[k] = g
    return HeatmapStack(maps=maps, stride=int(stride))


def _masked_sq_diff(pred: np.ndarray, gt: np.ndarray, joint_mask: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DomainError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mask = np.asarray(joint_mask, dtype=bool)
    if mask.shape != pred.shape[:-2]:
        raise DomainError(f"joint mask {mask.shape} does not match stacks {pred.shape}")
    count = int(mask.sum()) * pred.shape[-2] * pred.shape[-1]
    if count == 0:
        raise DomainError("no joints selected by the mask")
    return pred, gt, mask, count


def mse_loss(pred: np.ndarray, gt: np.ndarray, joint_mask) -> float:
    """Mean squared difference over the pixels of masked-in joints.

    Accepts (K, h, w) stacks or batched (B, K, h, w) with a matching
    (K,) / (B, K) mask.
    """
    pred, gt, mask, count = _masked_sq_diff(pred, gt, joint_mask)
    diff = (pred - gt)[mask]
    return float(np.sum(diff * diff) / count)


def mse_loss_grad(pred: np.ndarray, gt: np.ndarray, joint_mask) -> np.ndarray:
    """Gradient of mse_loss wrt pred: 2 (pred - gt) / count on masked-in joints."""
    pred, gt, mask, count = _masked_sq_diff(pred, gt, joint_mask)
    grad = np.zeros_like(pred)
    grad[mask] = 2.0 * (pred[mask] - gt[mask]) / count
    return grad
