"""Assemble augmented samples: align part scale, warp, and alpha-paste.

Images here are float64 RGB in [0, 1]; patch alpha is carried in [0, 1]
as the fourth warp channel.  Parts are placed in the "canvas" frame (the
patch keeps its native pixel size, centered), so the untransformed
placement (1, 0, 0, 0) drops a part dead-center at its aligned size and
the (tx, ty) components move its center in normalized canvas units.

Keypoint annotations pass through augmentation untouched: the pose net
must learn to localize joints that a pasted part occludes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError, MalformedInputError, UnavailableError
from .partpool import PartPatch, PartPool
from .warp import AugParams, warp_backward, warp_patch

ALPHA_BINARIZE_THRESHOLD = 0.5


@dataclass
class PersonInstance:
    """One training person: image, pixel bbox (x, y, w, h), (K, 4) keypoints
    (x, y, visible, annotated), and the dataset's distance normalizer."""

    image: np.ndarray
    bbox: tuple[float, float, float, float]
    keypoints: np.ndarray
    normalizer: float

    def validate(self):
        h, w = self.image.shape[:2]
        x, y, bw, bh = self.bbox
        if not (0 <= x <= x + bw <= w and 0 <= y <= y + bh <= h):
            raise MalformedInputError(f"bbox {self.bbox} outside image {w}x{h}")
        kp = np.asarray(self.keypoints)
        annotated = kp[:, 3] > 0
        if annotated.any():
            xs, ys = kp[annotated, 0], kp[annotated, 1]
            if xs.min() < 0 or ys.min() < 0 or xs.max() > w or ys.max() > h:
                raise MalformedInputError("annotated keypoint outside image bounds")
        return self


@dataclass(frozen=True)
class PasteRecord:
    patch_ref: tuple[int, int]   # (class_id, index within the class's pool entries)
    params: AugParams
    order: int


@dataclass
class AugmentedSample:
    image: np.ndarray
    keypoints: np.ndarray
    pastes: list[PasteRecord]
    seed: object = None


@dataclass(frozen=True)
class SdaRanges:
    """Uniform sampling box around the untransformed paste (1, 0, 0, 0)."""

    s_lo: float = 0.7
    s_hi: float = 1.3
    r_lo: float = -math.pi / 6
    r_hi: float = math.pi / 6
    t_lo: float = -0.5
    t_hi: float = 0.5

    def __post_init__(self):
        if not (0 < self.s_lo <= self.s_hi):
            raise ConfigError("scale range must satisfy 0 < lo <= hi")
        if self.r_lo > self.r_hi or self.t_lo > self.t_hi:
            raise ConfigError("range lower bounds must not exceed upper bounds")


@dataclass(frozen=True)
class SdaConfig:
    n_parts: int = 1
    ranges: SdaRanges = field(default_factory=SdaRanges)

    def __post_init__(self):
        if self.n_parts < 1:
            raise ConfigError(f"n_parts must be >= 1, got {self.n_parts}")


def patch_to_float(patch: PartPatch) -> np.ndarray:
    """uint8 RGBA -> float64 RGBA with channels in [0, 1]."""
    return patch.pixels.astype(np.float64) / 255.0


def align_part_scale(patch: PartPatch, person: PersonInstance) -> PartPatch:
    """Resize the patch by (person bbox height / source person height).

    Bilinear on all channels, then the alpha is re-binarized at 0.5 so the
    pool's binary-alpha convention survives; fractional alpha reappears
    only at warp time, where it carries the placement gradients.
    """
    target_h = person.bbox[3]
    src_h = patch.source_person_height
    if not (src_h > 0 and target_h > 0):
        raise DomainError(f"degenerate heights: source {src_h}, target {target_h}")
    factor = target_h / src_h
    if not (factor > 0 and math.isfinite(factor)):
        raise DomainError(f"degenerate scale factor {factor}")
    new_h = max(1, int(math.floor(patch.height * factor + 0.5)))
    new_w = max(1, int(math.floor(patch.width * factor + 0.5)))
    if (new_h, new_w) == (patch.height, patch.width) and factor == 1.0:
        return PartPatch(patch.class_id, patch.pixels.copy(),
                         patch.source_id, patch.source_person_height)
    resized = warp_patch(patch_to_float(patch), AugParams(1, 0, 0, 0),
                         (new_h, new_w), frame="patch")
    rgba = np.empty((new_h, new_w, 4), dtype=np.uint8)
    rgba[..., :3] = np.clip(np.floor(resized[..., :3] * 255.0 + 0.5), 0, 255)
    rgba[..., 3] = np.where(resized[..., 3] >= ALPHA_BINARIZE_THRESHOLD, 255, 0)
    return PartPatch(patch.class_id, rgba, patch.source_id, patch.source_person_height)


def paste(image: np.ndarray, warped: np.ndarray) -> np.ndarray:
    """Alpha-blend a warped RGBA raster over an RGB image, per pixel:
    out = (1 - a) * image + a * warped_rgb."""
    image = np.asarray(image, dtype=np.float64)
    warped = np.asarray(warped, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or warped.shape[:2] != image.shape[:2] \
            or warped.shape[2] != 4:
        raise DomainError(f"paste shapes incompatible: {image.shape} vs {warped.shape}")
    a = warped[..., 3:4]
    return (1.0 - a) * image + a * warped[..., :3]


def paste_backward(image: np.ndarray, warped: np.ndarray, upstream: np.ndarray):
    """Gradients of paste wrt both inputs; alpha collects (rgb - image) * up."""
    a = warped[..., 3:4]
    d_image = upstream * (1.0 - a)
    d_warped = np.empty_like(warped)
    d_warped[..., :3] = upstream * a
    d_warped[..., 3] = np.sum(upstream * (warped[..., :3] - image), axis=2)
    return d_image, d_warped


def random_params(ranges: SdaRanges, rng: np.random.Generator) -> AugParams:
    """One uniform draw per component; degenerate ranges return the bound."""
    return AugParams(
        s=float(rng.uniform(ranges.s_lo, ranges.s_hi)),
        r=float(rng.uniform(ranges.r_lo, ranges.r_hi)),
        tx=float(rng.uniform(ranges.t_lo, ranges.t_hi)),
        ty=float(rng.uniform(ranges.t_lo, ranges.t_hi)),
    )


def sample_entries(pool: PartPool, n: int, rng: np.random.Generator):
    """n uniform draws over all pool entries as (class_id, index, patch)."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    flat = pool.flat_entries()
    if not flat:
        raise UnavailableError("part pool is empty")
    picks = rng.integers(0, len(flat), size=n)
    return [flat[int(i)] for i in picks]


def apply_sda(person: PersonInstance, pool: PartPool, cfg: SdaConfig,
              seed) -> AugmentedSample:
    """Random semantic augmentation: paste n_parts pool patches with uniformly
    drawn placements, in sampling order.  Deterministic in ``seed``."""
    person.validate()
    rng = np.random.default_rng(seed)
    canvas = person.image.shape[:2]
    picks = sample_entries(pool, cfg.n_parts, rng)
    image = np.array(person.image, dtype=np.float64, copy=True)
    records = []
    for order, (cid, idx, patch) in enumerate(picks):
        params = random_params(cfg.ranges, rng)
        aligned = align_part_scale(patch, person)
        warped = warp_patch(patch_to_float(aligned), params, canvas, frame="canvas")
        image = paste(image, warped)
        records.append(PasteRecord(patch_ref=(cid, idx), params=params, order=order))
    return AugmentedSample(image=image, keypoints=np.array(person.keypoints, copy=True),
                           pastes=records, seed=seed)


def replay_pastes(person: PersonInstance, pool: PartPool,
                  records: list[PasteRecord]) -> AugmentedSample:
    """Re-run recorded pastes exactly (provenance replay)."""
    person.validate()
    image = np.array(person.image, dtype=np.float64, copy=True)
    for rec in sorted(records, key=lambda r: r.order):
        cid, idx = rec.patch_ref
        try:
            patch = pool.entries[cid][idx]
        except (KeyError, IndexError) as exc:
            raise UnavailableError(f"pool entry {rec.patch_ref} not found") from exc
        aligned = align_part_scale(patch, person)
        warped = warp_patch(patch_to_float(aligned), rec.params,
                            person.image.shape[:2], frame="canvas")
        image = paste(image, warped)
    return AugmentedSample(image=image, keypoints=np.array(person.keypoints, copy=True),
                           pastes=list(records), seed=None)


# -- differentiable composite (tape ops) --------------------------------------

def tape_warp(tape: ad.Tape, patch_value: np.ndarray, s: float, group: ad.Node,
              canvas: tuple[int, int]) -> ad.Node:
    """Warp with fixed scale and a (r, tx, ty) node; gradients flow to the node.

    The scale is sampled, never predicted, so it deliberately receives no
    gradient.
    """
    r, tx, ty = (float(x) for x in group.value)
    params = AugParams(s, r, tx, ty)
    out = warp_patch(patch_value, params, canvas, frame="canvas")

    def backward(up):
        wg = warp_backward(patch_value, params, up, frame="canvas")
        group.add_grad(wg.d_params[1:4])

    return ad.make_op(tape, out, (group,), backward, "warp")


def tape_paste(tape: ad.Tape, image: ad.Node, warped: ad.Node) -> ad.Node:
    img_v, warp_v = image.value, warped.value
    out = paste(img_v, warp_v)

    def backward(up):
        d_image, d_warped = paste_backward(img_v, warp_v, up)
        if image.requires_grad:
            image.add_grad(d_image)
        if warped.requires_grad:
            warped.add_grad(d_warped)

    return ad.make_op(tape, out, (image, warped), backward, "paste")


def apply_asda(person: PersonInstance, parts, gen_params, class_to_row: dict[int, int],
               ranges: SdaRanges, s_rng: np.random.Generator,
               tape: ad.Tape | None = None):
    """Compose tailored pastes: per part, scale is drawn from the neighborhood
    of 1.0 and (r, tx, ty) comes from that part class's predicted group.

    ``gen_params`` is an (n_groups, 3) array, or an autodiff Node of the
    same shape when ``tape`` is given — then the returned node carries the
    composite and gradients flow back into the group table (two parts of
    the same class share one group).  Returns (AugmentedSample, node|None).
    """
    person.validate()
    on_tape = tape is not None
    if on_tape and not isinstance(gen_params, ad.Node):
        gen_params = ad.Node(np.asarray(gen_params, dtype=np.float64), tape=tape)
    table = gen_params.value if on_tape else np.asarray(gen_params, dtype=np.float64)
    canvas = person.image.shape[:2]

    image_node = ad.Node(np.asarray(person.image, dtype=np.float64), tape=tape) \
        if on_tape else None
    image = np.array(person.image, dtype=np.float64, copy=True)
    records = []
    for order, part in enumerate(parts):
        # Accept bare patches or (class_id, pool_index, patch) provenance triples.
        patch = part if isinstance(part, PartPatch) else part[2]
        pool_index = -1 if isinstance(part, PartPatch) else part[1]
        if patch.class_id not in class_to_row:
            raise ConfigError(f"part class {patch.class_id} missing from the group table")
        row = class_to_row[patch.class_id]
        s = float(s_rng.uniform(ranges.s_lo, ranges.s_hi))
        r, tx, ty = (float(x) for x in table[row])
        params = AugParams(s, r, tx, ty)
        aligned = align_part_scale(patch, person)
        patch_f = patch_to_float(aligned)
        if on_tape:
            group = ad.take_row(tape, gen_params, (row,))
            warped_node = tape_warp(tape, patch_f, s, group, canvas)
            image_node = tape_paste(tape, image_node, warped_node)
            image = image_node.value
        else:
            warped = warp_patch(patch_f, params, canvas, frame="canvas")
            image = paste(image, warped)
        records.append(PasteRecord(patch_ref=(patch.class_id, pool_index), params=params,
                                   order=order))
    sample = AugmentedSample(image=image, keypoints=np.array(person.keypoints, copy=True),
                             pastes=records, seed=None)
    return sample, image_node
