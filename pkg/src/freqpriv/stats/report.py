"""
StatsReport: every dataset statistic for one AnnotationSet, written as one
CSV per statistic family plus ``summary.json``.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from freqpriv.data.handler import DataHandler
from freqpriv.stats.annotations import AnnotationSet
from freqpriv.stats.dataset_stats import (
    class_cv,
    class_scale_spread,
    contrast_table,
    disparity_table,
    face_density_histogram,
    normalized_sizes,
    objects_per_image,
    resolution_table,
    small_object_fraction,
    top_fraction_concentration,
)

logger = logging.getLogger(__name__)

CSV_FILES = {
    "class_counts": "class_counts.csv",
    "resolution": "resolution.csv",
    "object_sizes": "object_sizes.csv",
    "contrast": "contrast.csv",
    "disparity": "disparity.csv",
    "class_scale_spread": "class_scale_spread.csv",
    "face_density": "face_density.csv",
}


def default_face_ids(ann_set: AnnotationSet) -> List[int]:
    """Categories whose name mentions a face."""
    return [cid for cid, name in ann_set.category_names().items() if "face" in name.lower()]


@dataclass
class StatsReport:
    class_counts: pd.DataFrame
    cv: Optional[float]
    top20: Optional[float]
    resolution: pd.DataFrame
    object_sizes: pd.DataFrame
    contrast: pd.DataFrame
    disparity: pd.DataFrame
    class_scale_spread: pd.DataFrame
    face_density: pd.DataFrame
    n_images: int
    n_instances: int
    objects_per_image: float
    small_object_fraction: float

    def summary(self) -> Dict:
        return {
            "cv": self.cv,
            "top20": self.top20,
            "n_images": self.n_images,
            "n_instances": self.n_instances,
            "per_class_counts": {
                str(r.category_id): int(r.count) for r in self.class_counts.itertuples(index=False)
            },
            "objects_per_image": self.objects_per_image,
            "small_object_fraction": self.small_object_fraction,
        }

    def tables(self) -> Dict[str, pd.DataFrame]:
        return {key: getattr(self, key) for key in CSV_FILES}

    def write(self, out_dir: Union[str, Path]) -> List[Path]:
        out_dir = Path(out_dir)
        written = [
            DataHandler(out_dir / CSV_FILES[key]).save(frame)
            for key, frame in self.tables().items()
        ]
        written.append(DataHandler(out_dir / "summary.json").save(self.summary()))
        logger.info("Statistics written to %s", out_dir)
        return written


def compute_report(
    ann_set: AnnotationSet,
    face_category_ids: Optional[Iterable[int]] = None,
    with_contrast: bool = True,
) -> StatsReport:
    """
    Compute all statistics. Contrast needs the image rasters next to the
    annotation file; pass ``with_contrast=False`` for annotation-only sets.
    """
    counts = ann_set.class_counts()
    names = ann_set.category_names()
    class_counts = pd.DataFrame({
        "category_id": counts.index.astype(int),
        "name": [names[int(i)] for i in counts.index],
        "count": counts.to_numpy(dtype=np.int64),
    })

    cv = top20 = None
    if len(counts) and counts.sum() > 0:
        cv = class_cv(counts.to_numpy())
        top20 = top_fraction_concentration(counts.to_numpy(), 0.2)
    else:
        logger.warning("No instances: CV and concentration are undefined")

    face_ids = list(face_category_ids) if face_category_ids is not None else default_face_ids(ann_set)
    contrast = contrast_table(ann_set) if with_contrast else pd.DataFrame(
        columns=["annotation_id", "image_id", "category_id", "contrast_ratio", "skipped"]
    )

    report = StatsReport(
        class_counts=class_counts,
        cv=cv,
        top20=top20,
        resolution=resolution_table(ann_set),
        object_sizes=normalized_sizes(ann_set),
        contrast=contrast,
        disparity=disparity_table(ann_set),
        class_scale_spread=class_scale_spread(ann_set),
        face_density=face_density_histogram(ann_set, face_ids),
        n_images=ann_set.n_images,
        n_instances=ann_set.n_instances,
        objects_per_image=objects_per_image(ann_set),
        small_object_fraction=small_object_fraction(ann_set),
    )
    logger.info(
        "Stats: %d images, %d instances, CV=%s, top20=%s",
        report.n_images, report.n_instances, cv, top20,
    )
    return report
