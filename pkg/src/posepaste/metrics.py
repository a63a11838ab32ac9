"""Keypoint decoding and PCK-style accuracy reporting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def argmax_decode(heatmaps: np.ndarray, stride: int) -> np.ndarray:
    """Decode (K, h, w) heatmaps to (K, 2) keypoints in input pixels.

    Per joint: row-major-first argmax, then a quarter-pixel shift along each
    axis toward the higher of the two 4-neighbors (the usual refinement; no
    shift at map borders or on flat maps), finally scaled by the stride.
    """
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    if heatmaps.ndim != 3 or heatmaps.shape[1] < 1 or heatmaps.shape[2] < 1:
        raise DomainError(f"expected non-empty (K, h, w) heatmaps, got {heatmaps.shape}")
    K, h, w = heatmaps.shape
    out = np.zeros((K, 2), dtype=np.float64)
    for k in range(K):
        flat = int(np.argmax(heatmaps[k]))
        v, u = divmod(flat, w)
        x, y = float(u), float(v)
        if 0 < u < w - 1:
            dx = heatmaps[k, v, u + 1] - heatmaps[k, v, u - 1]
            x += 0.25 * np.sign(dx)
        if 0 < v < h - 1:
            dy = heatmaps[k, v + 1, u] - heatmaps[k, v - 1, u]
            y += 0.25 * np.sign(dy)
        out[k] = (x * stride, y * stride)
    return out


@dataclass
class PckReport:
    per_joint: list[float]        # percentage per joint; nan when never evaluated
    total: float                  # percentage over all evaluated (instance, joint) pairs
    threshold: float
    evaluated: int                # number of (instance, joint) pairs counted
    per_joint_evaluated: list[int]


def pck(preds: np.ndarray, gts: np.ndarray, normalizers: np.ndarray,
        threshold: float, eval_mask: np.ndarray | None = None) -> PckReport:
    """Percentage of predictions within threshold * normalizer of ground truth.

    The boundary counts as correct (distance == threshold * normalizer).
    ``eval_mask`` (N, K) selects which pairs participate, e.g. only the
    occluded joints for an invisible-keypoint split.
    """
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape or preds.ndim != 3 or preds.shape[2] != 2:
        raise DomainError(f"preds/gts must be matching (N, K, 2), got {preds.shape} vs {gts.shape}")
    N, K, _ = preds.shape
    normalizers = np.asarray(normalizers, dtype=np.float64)
    if normalizers.shape != (N,):
        raise DomainError(f"normalizers must be ({N},), got {normalizers.shape}")
    if N and normalizers.min() <= 0:
        raise DomainError("normalizers must be positive")
    mask = np.ones((N, K), dtype=bool) if eval_mask is None else np.asarray(eval_mask, dtype=bool)
    if mask.shape != (N, K):
        raise DomainError(f"eval mask must be ({N}, {K}), got {mask.shape}")
    if int(mask.sum()) == 0:
        raise DomainError("no joints evaluated")

    dist = np.linalg.norm(preds - gts, axis=2) / normalizers[:, None]
    correct = (dist <= threshold) & mask
    per_joint = []
    per_joint_n = []
    for k in range(K):
        n_k = int(mask[:, k].sum())
        per_joint_n.append(n_k)
        per_joint.append(100.0 * int(correct[:, k].sum()) / n_k if n_k else math.nan)
    evaluated = int(mask.sum())
    total = 100.0 * int(correct.sum()) / evaluated
    return PckReport(per_joint=per_joint, total=total, threshold=threshold,
                     evaluated=evaluated, per_joint_evaluated=per_joint_n)


def report_table(report: PckReport, joint_names: list[str]) -> str:
    """Two-line table with abbreviated joint columns and a Total column,
    e.g. ``Hea. Sho. Elb. Wri. Hip. Kne. Ank. Total``."""
    if len(joint_names) != len(report.per_joint):
        raise DomainError("joint name count does not match report")
    headers = [n[:3].capitalize() + "." for n in joint_names] + ["Total"]
    values = ["-" if math.isnan(v) else f"{v:.1f}" for v in report.per_joint]
    values.append(f"{report.total:.1f}")
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    body = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    return head + "\n" + body
