"""Semantic part pool: harvest labeled body-part patches from parsing maps.

A pool is built from (image, label map, person height) triples: connected
components of each foreground class become segments, optional merge rules
combine related classes into composite parts, small or low-value segments
are filtered, and the survivors are cropped into RGBA patches indexed by
class.  The pool persists as a manifest plus one PNG per patch.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import (
    ConfigError,
    CorruptManifestError,
    DomainError,
    MalformedInputError,
    MissingBlobError,
    UnavailableError,
    VersionMismatchError,
)

log = logging.getLogger(__name__)

POOL_FORMAT_VERSION = 1
BACKGROUND_ID = 0

DEFAULT_MIN_AREA = 35 * 35          # segments strictly below this are dropped
DEFAULT_SCATTER_DOMINANCE = 0.9     # largest-component share that triggers speckle removal


@dataclass(frozen=True)
class PartClass:
    id: int
    name: str
    is_composite: bool = False


@dataclass(frozen=True)
class MergeRule:
    """Combine the listed base classes into one composite class."""

    sources: tuple[int, ...]
    target: int


@dataclass
class SegmentMask:
    """One connected region of a single class, with a tight bounding box."""

    class_id: int
    bbox: tuple[int, int, int, int]  # top, left, height, width in source pixels
    mask: np.ndarray                 # bool, bbox-sized
    area: int


@dataclass
class PartPatch:
    """Cropped RGBA body-part raster; alpha is binary at build time."""

    class_id: int
    pixels: np.ndarray               # uint8 (h, w, 4)
    source_id: str
    source_person_height: float

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


class Catalog:
    """Dense class table; id 0 is background and never yields pool entries."""

    def __init__(self, classes: list[PartClass]):
        ids = [c.id for c in classes]
        if sorted(ids) != list(range(len(classes))):
            raise ConfigError("class ids must be unique and dense starting at 0")
        if classes[0].id != 0:
            classes = sorted(classes, key=lambda c: c.id)
        self.classes = list(classes)
        self.by_id = {c.id: c for c in classes}

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def usable_ids(self) -> list[int]:
        return [c.id for c in self.classes if c.id != BACKGROUND_ID]


def lip_catalog() -> tuple[Catalog, list[MergeRule]]:
    """Default 27-class table: background + 20 base part/clothing classes in the
    LIP labeling convention + 6 composite classes, i.e. 26 usable part types."""
    base = [
        "background", "hat", "hair", "glove", "sunglasses", "upper-clothes",
        "dress", "coat", "socks", "pants", "jumpsuit", "scarf", "skirt",
        "face", "left-arm", "right-arm", "left-leg", "right-leg",
        "left-shoe", "right-shoe", "torso-skin",
    ]
    classes = [PartClass(i, n) for i, n in enumerate(base)]
    composites = [
        ("left-leg+left-shoe", (16, 18)),
        ("right-leg+right-shoe", (17, 19)),
        ("left-arm+glove", (14, 3)),
        ("right-arm+glove", (15, 3)),
        ("upper-clothes+arms", (5, 14, 15)),
        ("pants+legs", (9, 16, 17)),
    ]
    rules = []
    for k, (name, sources) in enumerate(composites):
        cid = len(base) + k
        classes.append(PartClass(cid, name, is_composite=True))
        rules.append(MergeRule(sources=tuple(sources), target=cid))
    return Catalog(classes), rules


def toy_catalog() -> tuple[Catalog, list[MergeRule]]:
    """Class table matching the synthetic stick-figure datasets."""
    names = ["background", "head", "torso", "left-arm", "right-arm",
             "left-leg", "right-leg"]
    return Catalog([PartClass(i, n) for i, n in enumerate(names)]), []


DEFAULT_EXCLUDED_CLASSES = (4, 11, 8)  # sunglasses, scarf, socks


@dataclass
class PoolConfig:
    min_area: int = DEFAULT_MIN_AREA
    excluded_classes: tuple[int, ...] = DEFAULT_EXCLUDED_CLASSES
    merge_rules: tuple[MergeRule, ...] = ()
    drop_scatter: bool = True
    scatter_dominance: float = DEFAULT_SCATTER_DOMINANCE

    def to_dict(self) -> dict:
        return {
            "min_area": self.min_area,
            "excluded_classes": list(self.excluded_classes),
            "merge_rules": [{"sources": list(r.sources), "target": r.target}
                            for r in self.merge_rules],
            "drop_scatter": self.drop_scatter,
            "scatter_dominance": self.scatter_dominance,
        }

    @staticmethod
    def from_dict(d: dict) -> "PoolConfig":
        return PoolConfig(
            min_area=int(d["min_area"]),
            excluded_classes=tuple(d["excluded_classes"]),
            merge_rules=tuple(MergeRule(tuple(r["sources"]), int(r["target"]))
                              for r in d["merge_rules"]),
            drop_scatter=bool(d["drop_scatter"]),
            scatter_dominance=float(d["scatter_dominance"]),
        )


@dataclass
class PartPool:
    catalog: Catalog
    entries: dict[int, list[PartPatch]]
    build_config: PoolConfig = field(default_factory=PoolConfig)

    def census(self) -> dict[int, int]:
        return {cid: len(self.entries.get(cid, [])) for cid in self.catalog.usable_ids()}

    def total_entries(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def flat_entries(self) -> list[tuple[int, int, PartPatch]]:
        """(class_id, index-within-class, patch) in deterministic order."""
        out = []
        for cid in sorted(self.entries):
            for k, patch in enumerate(self.entries[cid]):
                out.append((cid, k, patch))
        return out


def _row_runs(row: np.ndarray):
    """Maximal runs of equal values in a 1-D array as (start, stop, value)."""
    if row.size == 0:
        return []
    change = np.flatnonzero(row[1:] != row[:-1]) + 1
    starts = np.concatenate(([0], change))
    stops = np.concatenate((change, [row.size]))
    return [(int(s), int(e), int(row[s])) for s, e in zip(starts, stops)]


class _UnionFind:
    def __init__(self):
        self.parent = []

    def make(self):
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def extract_segments(label_map: np.ndarray, num_classes: int) -> list[SegmentMask]:
    """Split a class-id raster into 4-connected components per foreground class.

    Row runs of equal value are united with overlapping same-value runs of
    the previous row, which keeps the union-find small.  The union of the
    returned masks per class reproduces that class's pixels exactly.
    """
    label_map = np.asarray(label_map)
    if label_map.ndim != 2:
        raise MalformedInputError(f"label map must be 2-D, got shape {label_map.shape}")
    if label_map.size and int(label_map.max()) >= num_classes:
        raise MalformedInputError(
            f"label value {int(label_map.max())} out of range for {num_classes} classes")
    if label_map.size and int(label_map.min()) < 0:
        raise MalformedInputError("negative label value")

    uf = _UnionFind()
    run_info = []           # run id -> (row, start, stop, value)
    prev = []               # (start, stop, value, run id) for the previous row
    for i in range(label_map.shape[0]):
        cur = []
        k = 0
        for start, stop, value in _row_runs(label_map[i]):
            rid = uf.make()
            run_info.append((i, start, stop, value))
            # Advance over previous-row runs that end before this run starts.
            while k < len(prev) and prev[k][1] <= start:
                k += 1
            j = k
            while j < len(prev) and prev[j][0] < stop:
                if prev[j][2] == value:
                    uf.union(rid, prev[j][3])
                j += 1
            cur.append((start, stop, value, rid))
        prev = cur

    groups: dict[int, list[int]] = {}
    for rid, (_, _, _, value) in enumerate(run_info):
        if value == BACKGROUND_ID:
            continue
        groups.setdefault(uf.find(rid), []).append(rid)

    segments = []
    for root in sorted(groups):
        rids = groups[root]
        rows = [run_info[r][0] for r in rids]
        top, bottom = min(rows), max(rows)
        left = min(run_info[r][1] for r in rids)
        right = max(run_info[r][2] for r in rids)
        mask = np.zeros((bottom - top + 1, right - left), dtype=bool)
        area = 0
        for r in rids:
            i, start, stop, _ = run_info[r]
            mask[i - top, start - left:stop - left] = True
            area += stop - start
        segments.append(SegmentMask(
            class_id=run_info[rids[0]][3],
            bbox=(top, left, mask.shape[0], mask.shape[1]),
            mask=mask,
            area=area,
        ))
    segments.sort(key=lambda s: (s.class_id, s.bbox[0], s.bbox[1]))
    return segments


def drop_scatter(segments: list[SegmentMask],
                 dominance: float = DEFAULT_SCATTER_DOMINANCE) -> list[SegmentMask]:
    """Remove speckle: when one component holds >= ``dominance`` of a class's
    area, keep only that component; otherwise the class's components are
    treated as genuinely disjoint parts and all survive."""
    by_class: dict[int, list[SegmentMask]] = {}
    for s in segments:
        by_class.setdefault(s.class_id, []).append(s)
    kept = []
    for cid in sorted(by_class):
        group = by_class[cid]
        total = sum(s.area for s in group)
        biggest = max(group, key=lambda s: s.area)
        if len(group) > 1 and biggest.area >= dominance * total:
            kept.append(biggest)
        else:
            kept.extend(group)
    kept.sort(key=lambda s: (s.class_id, s.bbox[0], s.bbox[1]))
    return kept


def merge_composites(segments: list[SegmentMask], rules: list[MergeRule],
                     catalog: Catalog) -> list[SegmentMask]:
    """Append composite segments per rule; input segments pass through untouched.

    For a rule whose source classes all appear, the union of their masks is
    re-labeled with the composite class, one new segment per 4-connected
    component of the union that joins at least two distinct source classes.
    """
    for rule in rules:
        for cid in (*rule.sources, rule.target):
            if cid not in catalog.by_id:
                raise ConfigError(f"merge rule references unknown class {cid}")
        if not catalog.by_id[rule.target].is_composite:
            raise ConfigError(f"merge target {rule.target} is not a composite class")
        if len(set(rule.sources)) != len(rule.sources):
            raise ConfigError("merge rule sources must be distinct")
        if any(catalog.by_id[c].is_composite for c in rule.sources):
            raise ConfigError("merge rule sources must be base classes")

    out = list(segments)
    for rule in rules:
        pool = [s for s in segments if s.class_id in rule.sources]
        present = {s.class_id for s in pool}
        if present != set(rule.sources):
            continue
        top = min(s.bbox[0] for s in pool)
        left = min(s.bbox[1] for s in pool)
        bottom = max(s.bbox[0] + s.bbox[2] for s in pool)
        right = max(s.bbox[1] + s.bbox[3] for s in pool)
        union = np.zeros((bottom - top, right - left), dtype=np.int32)
        for k, s in enumerate(pool):
            t, l, h, w = s.bbox
            region = union[t - top:t - top + h, l - left:l - left + w]
            region[s.mask] = k + 1
        comp_segs = extract_segments((union > 0).astype(np.int32), 2)
        for cs in comp_segs:
            t, l, h, w = cs.bbox
            ids = np.unique(union[t:t + h, l:l + w][cs.mask])
            classes_touched = {pool[i - 1].class_id for i in ids if i > 0}
            if len(classes_touched) < 2:
                continue
            out.append(SegmentMask(
                class_id=rule.target,
                bbox=(top + t, left + l, h, w),
                mask=cs.mask.copy(),
                area=cs.area,
            ))
    return out


def filter_segments(segments: list[SegmentMask], min_area: int,
                    excluded_classes) -> list[SegmentMask]:
    """Keep segments with area >= min_area (strictly-below dropped) whose class
    is not excluded."""
    if min_area < 1:
        raise DomainError(f"min_area must be >= 1, got {min_area}")
    excluded = set(excluded_classes)
    return [s for s in segments if s.area >= min_area and s.class_id not in excluded]


def crop_patch(image: np.ndarray, segment: SegmentMask) -> PartPatch:
    """Cut the segment's bbox out of an RGB image into an RGBA patch.

    Alpha is 255 exactly on mask pixels, 0 elsewhere.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise MalformedInputError(f"image must be (H, W, 3), got {image.shape}")
    if np.issubdtype(image.dtype, np.floating):
        image = np.clip(np.floor(image * 255.0 + 0.5), 0, 255).astype(np.uint8)
    t, l, h, w = segment.bbox
    if t < 0 or l < 0 or t + h > image.shape[0] or l + w > image.shape[1]:
        raise MalformedInputError(f"segment bbox {segment.bbox} outside image {image.shape[:2]}")
    rgba = np.zeros((h, w, 4), dtype=np.uint8)
    rgba[..., :3] = image[t:t + h, l:l + w]
    rgba[..., 3] = np.where(segment.mask, 255, 0)
    return PartPatch(class_id=segment.class_id, pixels=rgba,
                     source_id="", source_person_height=0.0)


def build_pool(dataset, config: PoolConfig, catalog: Catalog) -> PartPool:
    """Run extract -> (speckle removal) -> merge -> filter -> crop over a dataset.

    ``dataset`` yields (image, label_map, person_height) or
    (source_id, image, label_map, person_height).  Items whose rasters
    disagree in size are skipped with a log message.
    """
    entries: dict[int, list[PartPatch]] = {cid: [] for cid in catalog.usable_ids()}
    for index, item in enumerate(dataset):
        if len(item) == 4:
            source_id, image, label_map, person_height = item
        else:
            image, label_map, person_height = item
            source_id = f"item-{index:05d}"
        image = np.asarray(image)
        label_map = np.asarray(label_map)
        if image.shape[:2] != label_map.shape:
            log.warning("skipping %s: image %s vs label map %s",
                        source_id, image.shape[:2], label_map.shape)
            continue
        try:
            segments = extract_segments(label_map, catalog.num_classes)
        except MalformedInputError as exc:
            log.warning("skipping %s: %s", source_id, exc)
            continue
        if config.drop_scatter:
            segments = drop_scatter(segments, config.scatter_dominance)
        segments = merge_composites(segments, list(config.merge_rules), catalog)
        segments = filter_segments(segments, config.min_area, config.excluded_classes)
        for seg in segments:
            patch = crop_patch(image, seg)
            patch.source_id = source_id
            patch.source_person_height = float(person_height)
            entries[seg.class_id].append(patch)
    return PartPool(catalog=catalog, entries=entries, build_config=config)


def sample_parts(pool: PartPool, n: int, rng: np.random.Generator) -> list[PartPatch]:
    """Draw n patches uniformly over all pool entries, with replacement."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    flat = pool.flat_entries()
    if not flat:
        raise UnavailableError("part pool is empty")
    picks = rng.integers(0, len(flat), size=n)
    return [flat[int(i)][2] for i in picks]


# ---------------------------------------------------------------------------
# Persistence: <dir>/manifest.json + <dir>/patches/e#####.png


def _png_bytes(rgba: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def save_pool(pool: PartPool, path) -> None:
    from pathlib import Path

    root = Path(path)
    (root / "patches").mkdir(parents=True, exist_ok=True)
    index = []
    for n, (cid, _, patch) in enumerate(pool.flat_entries()):
        fname = f"patches/e{n:05d}.png"
        blob = _png_bytes(patch.pixels)
        (root / fname).write_bytes(blob)
        index.append({
            "class_id": cid,
            "file": fname,
            "sha256": hashlib.sha256(blob).hexdigest(),
            "source_id": patch.source_id,
            "source_person_height": patch.source_person_height,
            "height": patch.height,
            "width": patch.width,
        })
    manifest = {
        "format_version": POOL_FORMAT_VERSION,
        "config": pool.build_config.to_dict(),
        "classes": [{"id": c.id, "name": c.name, "is_composite": c.is_composite}
                    for c in pool.catalog.classes],
        "entries": index,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def load_pool(path) -> PartPool:
    from pathlib import Path

    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise CorruptManifestError(f"no manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptManifestError(f"unreadable manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != POOL_FORMAT_VERSION:
        raise VersionMismatchError(
            f"pool format {version}, expected {POOL_FORMAT_VERSION}")
    try:
        catalog = Catalog([PartClass(c["id"], c["name"], c["is_composite"])
                           for c in manifest["classes"]])
        config = PoolConfig.from_dict(manifest["config"])
        entry_index = manifest["entries"]
    except (KeyError, TypeError, ConfigError) as exc:
        raise CorruptManifestError(f"malformed manifest: {exc}") from exc

    entries: dict[int, list[PartPatch]] = {cid: [] for cid in catalog.usable_ids()}
    for rec in entry_index:
        blob_path = root / rec["file"]
        if not blob_path.exists():
            raise MissingBlobError(f"missing patch file {rec['file']}")
        blob = blob_path.read_bytes()
        if hashlib.sha256(blob).hexdigest() != rec["sha256"]:
            raise CorruptManifestError(f"checksum mismatch for {rec['file']}")
        rgba = np.asarray(Image.open(io.BytesIO(blob)).convert("RGBA"))
        if rgba.shape[:2] != (rec["height"], rec["width"]):
            raise CorruptManifestError(f"size mismatch for {rec['file']}")
        entries[int(rec["class_id"])].append(PartPatch(
            class_id=int(rec["class_id"]),
            pixels=rgba,
            source_id=rec["source_id"],
            source_person_height=float(rec["source_person_height"]),
        ))
    return PartPool(catalog=catalog, entries=entries, build_config=config)
