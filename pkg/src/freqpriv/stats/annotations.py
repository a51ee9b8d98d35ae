"""
COCO-style annotation subset: loading, validation and saving.

Only the fields the statistics and evaluator need are kept:

    images      [{id, file_name, width, height}]
    annotations [{id, image_id, category_id, bbox: [x, y, w, h]}]
    categories  [{id, name}]
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

from freqpriv.core.errors import AnnotationParseError, IntegrityError, ValidationError
from freqpriv.detection.boxes import BBox

logger = logging.getLogger(__name__)

IMAGE_COLUMNS = ["id", "file_name", "width", "height"]
ANNOTATION_COLUMNS = ["id", "image_id", "category_id", "x", "y", "w", "h"]
CATEGORY_COLUMNS = ["id", "name"]


_DTYPES = {
    "id": "int64", "image_id": "int64", "category_id": "int64",
    "width": "int64", "height": "int64",
    "x": "float64", "y": "float64", "w": "float64", "h": "float64",
    "file_name": "object", "name": "object",
}


def _empty(columns: List[str]) -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=_DTYPES[c]) for c in columns})


@dataclass
class AnnotationSet:
    images: pd.DataFrame = field(default_factory=lambda: _empty(IMAGE_COLUMNS))
    annotations: pd.DataFrame = field(default_factory=lambda: _empty(ANNOTATION_COLUMNS))
    categories: pd.DataFrame = field(default_factory=lambda: _empty(CATEGORY_COLUMNS))
    violations: List[Dict[str, Any]] = field(default_factory=list)
    root: Optional[Path] = None

    # ------------------------------------------------------------------
    # Views
    # ------------------------------------------------------------------

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def n_instances(self) -> int:
        return len(self.annotations)

    def class_counts(self) -> pd.Series:
        """Instance count per category id, zeros included, in category order."""
        counts = self.annotations["category_id"].value_counts()
        ids = self.categories["id"].astype(int)
        return pd.Series([int(counts.get(i, 0)) for i in ids], index=ids.to_list(), name="count")

    def category_names(self) -> Dict[int, str]:
        return dict(zip(self.categories["id"].astype(int), self.categories["name"].astype(str)))

    def boxes_for(self, image_id: int) -> List[BBox]:
        rows = self.annotations[self.annotations["image_id"] == image_id]
        return [
            BBox(float(r.x), float(r.y), float(r.w), float(r.h), class_id=int(r.category_id))
            for r in rows.itertuples(index=False)
        ]

    def image_path(self, image_id: int) -> Path:
        row = self.images[self.images["id"] == image_id]
        if row.empty:
            raise IntegrityError(f"Unknown image id {image_id}", offending_id=image_id)
        base = self.root or Path(".")
        return base / str(row.iloc[0]["file_name"])

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> Dict[str, List[Dict[str, Any]]]:
        return {
            "images": [
                {"id": int(r.id), "file_name": str(r.file_name),
                 "width": int(r.width), "height": int(r.height)}
                for r in self.images.itertuples(index=False)
            ],
            "annotations": [
                {"id": int(r.id), "image_id": int(r.image_id),
                 "category_id": int(r.category_id),
                 "bbox": [_number(r.x), _number(r.y), _number(r.w), _number(r.h)]}
                for r in self.annotations.itertuples(index=False)
            ],
            "categories": [
                {"id": int(r.id), "name": str(r.name)}
                for r in self.categories.itertuples(index=False)
            ],
        }

    def equals(self, other: "AnnotationSet") -> bool:
        return self.to_dict() == other.to_dict()


def _number(value: float) -> Union[int, float]:
    value = float(value)
    return int(value) if value.is_integer() else value


# ------------------------------------------------------------------
# Loading
# ------------------------------------------------------------------


def _require(record: Dict, keys: List[str], kind: str, index: int) -> None:
    if not isinstance(record, dict):
        raise ValidationError(f"{kind}[{index}] is not an object")
    missing = [k for k in keys if k not in record]
    if missing:
        raise ValidationError(f"{kind}[{index}] missing field(s) {missing}")


def _check_unique(ids: List[int], kind: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise IntegrityError(f"Duplicate {kind} id {i}", offending_id=i)
        seen.add(i)


def parse_annotations(data: Any, root: Optional[Path] = None) -> AnnotationSet:
    """Validate an already-decoded document and build the set."""
    if not isinstance(data, dict):
        raise ValidationError("Annotation document root must be an object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(data.get(key), list):
            raise ValidationError(f"Annotation document needs a '{key}' list")

    images = []
    for n, img in enumerate(data["images"]):
        _require(img, IMAGE_COLUMNS, "images", n)
        width, height = int(img["width"]), int(img["height"])
        if width <= 0 or height <= 0:
            raise ValidationError(f"Image {img['id']} has non-positive size {width}×{height}")
        images.append([int(img["id"]), str(img["file_name"]), width, height])

    categories = []
    for n, cat in enumerate(data["categories"]):
        _require(cat, CATEGORY_COLUMNS, "categories", n)
        categories.append([int(cat["id"]), str(cat["name"])])

    _check_unique([r[0] for r in images], "image")
    _check_unique([r[0] for r in categories], "category")
    sizes = {r[0]: (r[2], r[3]) for r in images}
    category_ids = {r[0] for r in categories}

    annotations = []
    violations: List[Dict[str, Any]] = []
    for n, ann in enumerate(data["annotations"]):
        _require(ann, ["id", "image_id", "category_id", "bbox"], "annotations", n)
        ann_id, image_id, cat_id = int(ann["id"]), int(ann["image_id"]), int(ann["category_id"])
        if image_id not in sizes:
            raise IntegrityError(
                f"Annotation {ann_id} references missing image_id {image_id}", offending_id=image_id
            )
        if cat_id not in category_ids:
            raise IntegrityError(
                f"Annotation {ann_id} references missing category_id {cat_id}", offending_id=cat_id
            )
        bbox = ann["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise ValidationError(f"Annotation {ann_id} bbox must be [x, y, w, h]")
        x, y, w, h = (float(v) for v in bbox)

        if w <= 0 or h <= 0:
            violations.append({"annotation_id": ann_id, "reason": "non-positive extent"})
            continue
        width, height = sizes[image_id]
        if x < 0 or y < 0 or x + w > width or y + h > height:
            violations.append({"annotation_id": ann_id, "reason": "outside image bounds"})
        annotations.append([ann_id, image_id, cat_id, x, y, w, h])

    _check_unique([r[0] for r in annotations], "annotation")

    if violations:
        logger.warning("%d annotation violation(s) flagged", len(violations))

    ann_frame = pd.DataFrame(annotations, columns=ANNOTATION_COLUMNS) if annotations else _empty(ANNOTATION_COLUMNS)
    if annotations:
        ann_frame[["x", "y", "w", "h"]] = ann_frame[["x", "y", "w", "h"]].astype(float)
    return AnnotationSet(
        images=pd.DataFrame(images, columns=IMAGE_COLUMNS) if images else _empty(IMAGE_COLUMNS),
        annotations=ann_frame,
        categories=pd.DataFrame(categories, columns=CATEGORY_COLUMNS) if categories else _empty(CATEGORY_COLUMNS),
        violations=violations,
        root=root,
    )


def load_annotations(path: Union[str, Path]) -> AnnotationSet:
    """
    Load and validate an annotation file.

    Raises AnnotationParseError (with line/column) on malformed JSON and
    IntegrityError naming the offending id on dangling references. Boxes
    with bad geometry are listed in ``violations``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"Cannot read annotations {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(path, exc.lineno, exc.colno, exc.msg) from exc

    ann_set = parse_annotations(data, root=path.parent)
    logger.info(
        "Loaded %s: %d images, %d instances, %d categories",
        path.name, ann_set.n_images, ann_set.n_instances, len(ann_set.categories),
    )
    return ann_set


def save_annotations(ann_set: AnnotationSet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(ann_set.to_dict(), sort_keys=True, separators=(",", ":"))
    path.write_text(text + "\n", encoding="utf-8")
    return path
