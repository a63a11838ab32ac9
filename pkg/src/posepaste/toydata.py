"""Synthetic stick-figure datasets for desk-scale experiments.

Each image is one figure over a smooth noisy background: a filled head,
a thick torso stroke, two arms and two legs, all rasterized as
distance-to-segment masks.  The label map assigns one class per part
(head, torso, left/right arm, left/right leg); keypoints are the 8
skeleton landmarks (head, neck, shoulders, arm tips, leg tips); the
normalizer is the torso length.  The held-out split additionally drops
distractor shapes (ellipses and rotated bars, colored like body
material) over randomly chosen joints and records which joints were
covered, which gives the invisible-keypoint evaluation mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HEAD, TORSO, L_ARM, R_ARM, L_LEG, R_LEG = 1, 2, 3, 4, 5, 6

JOINT_HEAD, JOINT_NECK = 0, 1
JOINT_LSHO, JOINT_RSHO = 2, 3
JOINT_LARM, JOINT_RARM = 4, 5
JOINT_LLEG, JOINT_RLEG = 6, 7
NUM_JOINTS = 8


@dataclass
class ToyDataConfig:
    count: int = 512
    image_size: int = 64
    seed: int = 0
    occlude: bool = False          # distractor shapes on (for the held-out split)
    occluders_lo: int = 1
    occluders_hi: int = 2          # inclusive
    occluder_scale: float = 1.0


def _grid(size):
    ys, xs = np.mgrid[0:size, 0:size]
    return xs + 0.5, ys + 0.5


def segment_mask(size: int, p0, p1, width: float) -> np.ndarray:
    """Pixels within width/2 of the segment p0-p1 (round caps)."""
    xs, ys = _grid(size)
    ax, ay = p0
    bx, by = p1
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    if den < 1e-12:
        d2 = (xs - ax) ** 2 + (ys - ay) ** 2
    else:
        t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / den, 0.0, 1.0)
        d2 = (xs - (ax + t * dx)) ** 2 + (ys - (ay + t * dy)) ** 2
    return d2 <= (width / 2.0) ** 2


def disk_mask(size: int, center, radius: float) -> np.ndarray:
    xs, ys = _grid(size)
    return (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius ** 2


def ellipse_mask(size: int, center, rx: float, ry: float, angle: float) -> np.ndarray:
    xs, ys = _grid(size)
    c, s = math.cos(angle), math.sin(angle)
    u = (xs - center[0]) * c + (ys - center[1]) * s
    v = -(xs - center[0]) * s + (ys - center[1]) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _saturate(rgb):
    return np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)


def _palette(rng):
    skin = _saturate([0.75, 0.55, 0.40] + rng.uniform(-0.12, 0.18, 3))
    shirt = _saturate(rng.uniform(0.15, 0.95, 3))
    pants = _saturate(rng.uniform(0.05, 0.6, 3))
    return {"skin": skin, "shirt": shirt, "pants": pants}


def _background(size, rng):
    c0 = rng.uniform(0.25, 0.95, 3)
    c1 = rng.uniform(0.25, 0.95, 3)
    angle = rng.uniform(0, 2 * math.pi)
    xs, ys = _grid(size)
    t = (xs * math.cos(angle) + ys * math.sin(angle)) / (size * 1.5)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    img = c0[None, None, :] * (1 - t[..., None]) + c1[None, None, :] * t[..., None]
    img += rng.normal(0, 0.015, img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_figure(rng: np.random.Generator, size: int):
    """One stick figure: returns (image, label, keypoints, palette)."""
    palette = _palette(rng)
    img = _background(size, rng)
    label = np.zeros((size, size), dtype=np.int32)

    s = size / 64.0
    pelvis = np.array([size / 2 + rng.uniform(-6, 6) * s,
                       size * 0.66 + rng.uniform(-4, 4) * s])
    torso_len = rng.uniform(14, 18) * s
    lean = rng.uniform(-0.22, 0.22)
    up = np.array([math.sin(lean), -math.cos(lean)])
    neck = pelvis + torso_len * up
    head_r = rng.uniform(3.5, 5.0) * s
    head_c = neck + (head_r + 1.5 * s) * up

    perp = np.array([-up[1], up[0]])
    half_sh = rng.uniform(3.0, 4.5) * s
    lsho = neck + half_sh * perp
    rsho = neck - half_sh * perp

    def limb_tip(origin, side, lo_deg, hi_deg, length):
        # Angle measured from straight down; side +1 swings left, -1 right.
        ang = math.radians(rng.uniform(lo_deg, hi_deg)) * side
        direction = np.array([math.sin(ang), math.cos(ang)])
        return origin + length * direction

    larm = limb_tip(lsho, +1, 10, 120, rng.uniform(10, 14) * s)
    rarm = limb_tip(rsho, -1, 10, 120, rng.uniform(10, 14) * s)
    lleg = limb_tip(pelvis, +1, 4, 32, rng.uniform(13, 17) * s)
    rleg = limb_tip(pelvis, -1, 4, 32, rng.uniform(13, 17) * s)

    def clamp(pt):
        return np.clip(pt, 1.0, size - 1.0)

    pelvis, neck, head_c = clamp(pelvis), clamp(neck), clamp(head_c)
    lsho, rsho = clamp(lsho), clamp(rsho)
    larm, rarm, lleg, rleg = clamp(larm), clamp(rarm), clamp(lleg), clamp(rleg)

    strokes = [
        (TORSO, segment_mask(size, pelvis, neck, 5.0 * s), palette["shirt"]),
        (L_LEG, segment_mask(size, pelvis, lleg, 3.2 * s), palette["pants"]),
        (R_LEG, segment_mask(size, pelvis, rleg, 3.2 * s), palette["pants"] * 0.92),
        (L_ARM, segment_mask(size, lsho, larm, 2.8 * s), palette["skin"]),
        (R_ARM, segment_mask(size, rsho, rarm, 2.8 * s), palette["skin"] * 0.92),
        (HEAD, disk_mask(size, head_c, head_r), palette["skin"] * 1.05),
    ]
    for cid, mask, color in strokes:
        img[mask] = _saturate(color)
        label[mask] = cid

    keypoints = np.zeros((NUM_JOINTS, 4), dtype=np.float64)
    for j, pt in [(JOINT_HEAD, head_c), (JOINT_NECK, neck), (JOINT_LSHO, lsho),
                  (JOINT_RSHO, rsho), (JOINT_LARM, larm), (JOINT_RARM, rarm),
                  (JOINT_LLEG, lleg), (JOINT_RLEG, rleg)]:
        keypoints[j] = (pt[0], pt[1], 1.0, 1.0)
    return img, label, keypoints, palette


def add_distractors(img, label, keypoints, rng, cfg: ToyDataConfig):
    """Drop body-material-colored shapes over random joints.

    Returns the occlusion flags per joint (True where the joint's 3x3
    neighborhood was covered); covered pixels leave the person's parsing.
    """
    size = img.shape[0]
    s = size / 64.0 * cfg.occluder_scale
    n = int(rng.integers(cfg.occluders_lo, cfg.occluders_hi + 1))
    covered = np.zeros((size, size), dtype=bool)
    donor = _palette(rng)
    for _ in range(n):
        joint = int(rng.integers(0, NUM_JOINTS))
        target = keypoints[joint, :2] + rng.uniform(-2.5, 2.5, 2) * s
        color = _saturate(donor[["skin", "shirt", "pants"][int(rng.integers(0, 3))]]
                          + rng.uniform(-0.05, 0.05, 3))
        kind = int(rng.integers(0, 3))
        if kind == 0:
            mask = ellipse_mask(size, target, rng.uniform(3.5, 6.5) * s,
                                rng.uniform(2.5, 5.0) * s, rng.uniform(0, math.pi))
        elif kind == 1:
            ang = rng.uniform(0, math.pi)
            half = rng.uniform(5, 9) * s
            d = np.array([math.cos(ang), math.sin(ang)]) * half
            mask = segment_mask(size, target - d, target + d, rng.uniform(3, 5) * s)
        else:
            mask = disk_mask(size, target, rng.uniform(3.0, 5.5) * s)
        img[mask] = color
        label[mask] = 0
        covered |= mask

    occluded = []
    for j in range(NUM_JOINTS):
        x = int(np.clip(round(keypoints[j, 0] - 0.5), 1, size - 2))
        y = int(np.clip(round(keypoints[j, 1] - 0.5), 1, size - 2))
        hit = covered[y - 1:y + 2, x - 1:x + 2].all()
        occluded.append(bool(hit))
        if hit:
            keypoints[j, 2] = 0.0  # occluded joints stay annotated
    return img, label, keypoints, occluded


def person_bbox(label: np.ndarray, margin: int = 2):
    ys, xs = np.nonzero(label > 0)
    size = label.shape[0]
    x0 = max(0, int(xs.min()) - margin)
    y0 = max(0, int(ys.min()) - margin)
    x1 = min(size, int(xs.max()) + 1 + margin)
    y1 = min(size, int(ys.max()) + 1 + margin)
    return (float(x0), float(y0), float(x1 - x0), float(y1 - y0))


def generate_items(cfg: ToyDataConfig) -> list[dict]:
    """The full split as write_split-ready dicts; deterministic in cfg.seed."""
    items = []
    for index in range(cfg.count):
        rng = np.random.default_rng([cfg.seed, 1 if cfg.occlude else 0, index])
        img, label, keypoints, _ = generate_figure(rng, cfg.image_size)
        # Normalizer: torso size, from the skeleton (neck to mid-hip estimate).
        mid_hip = (keypoints[JOINT_LLEG, :2] + keypoints[JOINT_RLEG, :2]) / 2
        torso = float(np.linalg.norm(keypoints[JOINT_NECK, :2] - mid_hip)) * 1.25
        occluded = [False] * NUM_JOINTS
        if cfg.occlude:
            img, label, keypoints, occluded = add_distractors(
                img, label, keypoints, rng, cfg)
        bbox = person_bbox(label) if (label > 0).any() else \
            (0.0, 0.0, float(cfg.image_size), float(cfg.image_size))
        census = {int(c): int((label == c).sum()) for c in np.unique(label) if c > 0}
        items.append({
            "stem": f"{'test' if cfg.occlude else 'train'}-{index:05d}",
            "image": img,
            "label": label,
            "keypoints": keypoints,
            "bbox": bbox,
            "normalizer": max(torso, 4.0),
            "census": census,
            "occluded": occluded,
        })
    return items
