"""
Dataset statistics over an AnnotationSet.

Conventions: population variance and standard deviation throughout,
natural log for size disparity, ceil for the top-fraction class cut,
linear-interpolation quantiles.
"""

import logging
import math
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from freqpriv.core.errors import NumericalError, ValidationError
from freqpriv.data.imageio import raster_intensity, read_raster
from freqpriv.detection.boxes import BBox
from freqpriv.stats.annotations import AnnotationSet

logger = logging.getLogger(__name__)

FACE_BUCKETS: List[str] = [str(i) for i in range(1, 32)] + ["32+"]


# ------------------------------------------------------------------
# Class distribution
# ------------------------------------------------------------------


def _counts(counts: Iterable[float]) -> np.ndarray:
    values = np.asarray(list(counts), dtype=np.float64)
    if values.size == 0:
        raise NumericalError("Class counts are empty")
    if np.any(values < 0):
        raise ValidationError("Class counts must be non-negative")
    return values


def class_cv(counts: Iterable[float]) -> float:
    """Coefficient of variation σ/μ of per-class instance counts."""
    values = _counts(counts)
    mean = values.mean()
    if mean == 0:
        raise NumericalError("CV is undefined for all-zero class counts")
    return float(values.std() / mean)


def top_fraction_concentration(counts: Iterable[float], fraction: float = 0.2) -> float:
    """Share of all instances held by the ceil(fraction·K) most frequent classes."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    values = _counts(counts)
    total = values.sum()
    if total == 0:
        raise NumericalError("Concentration is undefined for all-zero class counts")
    head = math.ceil(fraction * values.size)
    return float(np.sort(values)[::-1][:head].sum() / total)


# ------------------------------------------------------------------
# Per-object / per-image geometry
# ------------------------------------------------------------------


def normalized_object_size(box: BBox, image_width: float, image_height: float) -> float:
    area = image_width * image_height
    if area <= 0:
        raise ValidationError(f"Image area must be positive, got {image_width}×{image_height}")
    return float(box.w * box.h / area)


def normalized_sizes(ann_set: AnnotationSet) -> pd.DataFrame:
    """One row per annotation: ids and (w·h)/(W·H)."""
    merged = ann_set.annotations.merge(
        ann_set.images[["id", "width", "height"]].rename(columns={"id": "image_id"}),
        on="image_id", how="left",
    )
    area = merged["width"].astype(float) * merged["height"].astype(float)
    if (area <= 0).any():
        raise ValidationError("Image area must be positive")
    return pd.DataFrame({
        "annotation_id": merged["id"].astype(int),
        "image_id": merged["image_id"].astype(int),
        "category_id": merged["category_id"].astype(int),
        "size_ratio": (merged["w"].astype(float) * merged["h"].astype(float) / area).astype(float),
    })


def pixel_window(box: BBox, width: int, height: int):
    """Enclosing integer pixel window (x0, y0, x1, y1), clamped; None if empty."""
    x0 = max(int(math.floor(box.x)), 0)
    y0 = max(int(math.floor(box.y)), 0)
    x1 = min(int(math.ceil(box.x + box.w)), width)
    y1 = min(int(math.ceil(box.y + box.h)), height)
    if x1 - x0 < 1 or y1 - y0 < 1:
        return None
    return x0, y0, x1, y1


def relative_contrast(raster: np.ndarray, box: BBox) -> Optional[float]:
    """
    Box pixel variance over whole-image pixel variance.

    Returns None when the box covers no whole pixel after clamping.
    """
    plane = raster_intensity(raster)
    global_var = float(plane.var())
    if global_var == 0:
        raise NumericalError("Relative contrast is undefined for a constant image")
    window = pixel_window(box, plane.shape[1], plane.shape[0])
    if window is None:
        return None
    x0, y0, x1, y1 = window
    return float(plane[y0:y1, x0:x1].var() / global_var)


def size_disparity(boxes: Sequence[BBox]) -> Optional[float]:
    """ln(max area / min area); None for fewer than two boxes."""
    if len(boxes) < 2:
        return None
    areas = np.array([b.w * b.h for b in boxes], dtype=np.float64)
    if areas.min() <= 0:
        raise ValidationError("Size disparity needs positive box areas")
    return float(np.log(areas.max() / areas.min()))


def contrast_table(ann_set: AnnotationSet) -> pd.DataFrame:
    """Relative contrast per annotation; reads each image raster once."""
    rows = []
    for image_id in ann_set.images["id"].astype(int):
        boxes = ann_set.boxes_for(image_id)
        if not boxes:
            continue
        ann_ids = ann_set.annotations.loc[ann_set.annotations["image_id"] == image_id, "id"]
        raster = read_raster(ann_set.image_path(image_id))
        for ann_id, box in zip(ann_ids.astype(int), boxes):
            value = relative_contrast(raster, box)
            rows.append({
                "annotation_id": ann_id,
                "image_id": image_id,
                "category_id": box.class_id,
                "contrast_ratio": np.nan if value is None else value,
                "skipped": value is None,
            })
    columns = ["annotation_id", "image_id", "category_id", "contrast_ratio", "skipped"]
    return pd.DataFrame(rows, columns=columns)


def disparity_table(ann_set: AnnotationSet) -> pd.DataFrame:
    rows = []
    for image_id in ann_set.images["id"].astype(int):
        value = size_disparity(ann_set.boxes_for(image_id))
        if value is not None:
            rows.append({"image_id": image_id, "size_disparity": value})
    return pd.DataFrame(rows, columns=["image_id", "size_disparity"])


# ------------------------------------------------------------------
# Per-class / per-image aggregates
# ------------------------------------------------------------------


def class_scale_spread(ann_set: AnnotationSet) -> pd.DataFrame:
    """min / q25 / median / q75 / max of normalized size per category."""
    sizes = normalized_sizes(ann_set)
    names = ann_set.category_names()
    rows = []
    for cat_id, group in sizes.groupby("category_id", sort=True):
        q = np.quantile(group["size_ratio"].to_numpy(), [0.0, 0.25, 0.5, 0.75, 1.0])
        rows.append({
            "category_id": int(cat_id), "name": names.get(int(cat_id), str(cat_id)),
            "count": len(group), "min": q[0], "q25": q[1], "median": q[2],
            "q75": q[3], "max": q[4],
        })
    columns = ["category_id", "name", "count", "min", "q25", "median", "q75", "max"]
    return pd.DataFrame(rows, columns=columns)


def _bucket(n_faces: int) -> str:
    return "32+" if n_faces >= 32 else str(n_faces)


def face_density_histogram(ann_set: AnnotationSet, face_category_ids: Iterable[int]) -> pd.DataFrame:
    """
    Images and face instances per faces-per-image bucket ("1" .. "31", "32+").

    Images without faces are excluded.
    """
    face_ids = {int(i) for i in face_category_ids}
    faces = ann_set.annotations[ann_set.annotations["category_id"].astype(int).isin(face_ids)]
    per_image = faces.groupby("image_id").size()

    table = pd.DataFrame({"bucket": FACE_BUCKETS, "images": 0, "instances": 0}).set_index("bucket")
    for n_faces in per_image.to_numpy():
        bucket = _bucket(int(n_faces))
        table.loc[bucket, "images"] += 1
        table.loc[bucket, "instances"] += int(n_faces)
    return table.reset_index()


def resolution_table(ann_set: AnnotationSet) -> pd.DataFrame:
    """(width, height, aspect = h/w) per image."""
    images = ann_set.images
    width = images["width"].astype(int)
    height = images["height"].astype(int)
    return pd.DataFrame({
        "image_id": images["id"].astype(int),
        "width": width,
        "height": height,
        "aspect": height.astype(float) / width.astype(float),
    })


def objects_per_image(ann_set: AnnotationSet) -> float:
    if ann_set.n_images == 0:
        return 0.0
    return ann_set.n_instances / ann_set.n_images


def small_object_fraction(ann_set: AnnotationSet, threshold: float = 0.10) -> float:
    """Share of instances with normalized size below ``threshold``."""
    if ann_set.n_instances == 0:
        return 0.0
    sizes = normalized_sizes(ann_set)["size_ratio"]
    return float((sizes < threshold).mean())
