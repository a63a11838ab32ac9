"""Dataset root I/O.

A dataset root holds ``images/*.png`` (RGB), ``labels/*.png`` (single
channel class ids), ``meta/*.json`` (person bbox, keypoints, normalizer,
per-class census, occlusion flags), paired by filename stem, plus one
``dataset.json`` with the joint schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .compositor import PersonInstance
from .errors import MalformedInputError

TOY_JOINT_NAMES = ["head", "neck", "lsho", "rsho", "larm", "rarm", "lleg", "rleg"]


@dataclass
class DatasetItem:
    stem: str
    image: np.ndarray            # float64 (H, W, 3) in [0, 1]
    label_map: np.ndarray | None  # int32 (H, W) or None
    keypoints: np.ndarray        # (K, 4): x, y, visible, annotated
    bbox: tuple[float, float, float, float]
    normalizer: float

    def person(self) -> PersonInstance:
        return PersonInstance(image=self.image, bbox=self.bbox,
                              keypoints=self.keypoints, normalizer=self.normalizer)


def write_image(path: Path, rgb01: np.ndarray) -> None:
    arr = np.clip(np.floor(rgb01 * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def write_label(path: Path, label: np.ndarray) -> None:
    Image.fromarray(label.astype(np.uint8), mode="L").save(path)


def read_image(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def read_label(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.int32)


def write_split(root: Path, items: list[dict], joint_names: list[str]) -> None:
    """Write images/labels/meta plus the split-level schema file.

    Each item dict carries: stem, image, label, keypoints, bbox, normalizer,
    census, occluded.
    """
    root = Path(root)
    for sub in ("images", "labels", "meta"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "dataset.json").write_text(json.dumps(
        {"joints": joint_names, "num_joints": len(joint_names)}, indent=1))
    for item in items:
        stem = item["stem"]
        write_image(root / "images" / f"{stem}.png", item["image"])
        write_label(root / "labels" / f"{stem}.png", item["label"])
        meta = {
            "bbox": [float(v) for v in item["bbox"]],
            "keypoints": np.asarray(item["keypoints"], dtype=np.float64).tolist(),
            "normalizer": float(item["normalizer"]),
            "census": {str(k): int(v) for k, v in item["census"].items()},
            "occluded": [int(v) for v in item["occluded"]],
        }
        (root / "meta" / f"{stem}.json").write_text(json.dumps(meta, indent=1))


def load_joint_names(root: Path) -> list[str]:
    schema_path = Path(root) / "dataset.json"
    if not schema_path.exists():
        raise MalformedInputError(f"missing dataset.json under {root}")
    return list(json.loads(schema_path.read_text())["joints"])


def load_split(root: Path, with_labels: bool = True) -> list[DatasetItem]:
    root = Path(root)
    image_dir = root / "images"
    if not image_dir.is_dir():
        raise MalformedInputError(f"no images/ directory under {root}")
    items = []
    for image_path in sorted(image_dir.glob("*.png")):
        stem = image_path.stem
        meta_path = root / "meta" / f"{stem}.json"
        if not meta_path.exists():
            raise MalformedInputError(f"missing meta for {stem}")
        meta = json.loads(meta_path.read_text())
        label_path = root / "labels" / f"{stem}.png"
        label = read_label(label_path) if with_labels and label_path.exists() else None
        items.append(DatasetItem(
            stem=stem,
            image=read_image(image_path),
            label_map=label,
            keypoints=np.asarray(meta["keypoints"], dtype=np.float64),
            bbox=tuple(meta["bbox"]),
            normalizer=float(meta["normalizer"]),
        ))
    return items


def load_occlusion_mask(root: Path, items: list[DatasetItem]) -> np.ndarray:
    """(N, K) bool: True where the joint was covered by a distractor."""
    root = Path(root)
    rows = []
    for item in items:
        meta = json.loads((root / "meta" / f"{item.stem}.json").read_text())
        rows.append([bool(v) for v in meta["occluded"]])
    return np.asarray(rows, dtype=bool)


def pool_source_iter(root: Path):
    """Yield (source_id, image, label_map, person_height) for pool building."""
    for item in load_split(root, with_labels=True):
        if item.label_map is None:
            continue
        yield item.stem, item.image, item.label_map, item.bbox[3]
