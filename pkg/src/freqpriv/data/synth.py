"""
Synthetic privacy-like scenes.

Two object families are rendered over a smoothed-noise background with a
low-frequency gradient:

* face-like blobs (the first ``num_face_classes`` class ids), shaded
  ellipses with a class-dependent falloff;
* text-like glyph blocks (all other ids), class-keyed stroke grids inside a
  one-pixel frame, i.e. high-frequency content.

Each object is alpha-blended at a contrast drawn from the configured range,
where contrast is object-pattern variance over background variance.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.ndimage import gaussian_filter
from tqdm.auto import tqdm

from freqpriv.core.errors import ConfigError
from freqpriv.core.settings import settings
from freqpriv.data.handler import DataHandler
from freqpriv.data.imageio import read_raster, to_chw
from freqpriv.detection.boxes import BBox
from freqpriv.stats.annotations import AnnotationSet, load_annotations, parse_annotations
from freqpriv.utils.helpers import canonical_json, derive_rng, sha256_bytes

logger = logging.getLogger(__name__)

PRIVACY_TAXONOMY: Dict[str, List[str]] = {
    "human_presence": [
        "child face indoor", "teenager face indoor", "adult face indoor",
        "elder face indoor", "child face outdoor", "teenager face outdoor",
        "adult face outdoor", "elder face outdoor",
    ],
    "on_screen_pii": [
        "chat", "email", "password", "account", "address", "verify code",
        "identification number", "history", "name",
    ],
    "physical_identifier": [
        "id", "passport", "driving license", "bank card", "receipt", "invoice",
        "express order", "flight pass", "train ticket", "chinese car plate",
        "non-chinese car plate", "electric bike plate",
    ],
    "location_indicator": ["store sign", "school sign", "community sign", "street sign"],
}

MAX_PLACEMENT_ATTEMPTS = 50
SMALL_AREA_RATIO = 0.10
MIN_SIDE = 2
BLEND_ALPHA = 0.9
# stream offset separating per-class glyph templates from per-image draws
_TEMPLATE_STREAM = 1 << 20


@dataclass(frozen=True)
class SceneConfig:
    image_height: int = 64
    image_width: int = 64
    channels: int = 1
    num_classes: int = 30
    class_law: str = "zipf"
    zipf_s: float = 1.0
    objects_law: str = "poisson"
    objects_mean: float = 3.0
    objects_max: int = 8
    small_fraction: float = 0.6
    fixed_area_ratio: Optional[float] = None
    aspect_range: Tuple[float, float] = (0.5, 2.0)
    contrast_range: Tuple[float, float] = (0.5, 2.0)
    num_face_classes: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if min(self.image_height, self.image_width) < 8:
            raise ConfigError("image dims must be >= 8 pixels")
        if self.class_law not in ("uniform", "zipf"):
            raise ConfigError(f"class_law must be 'uniform' or 'zipf', got '{self.class_law}'")
        if self.zipf_s < 0:
            raise ConfigError("zipf_s must be >= 0")
        if self.objects_law not in ("poisson", "fixed"):
            raise ConfigError(f"objects_law must be 'poisson' or 'fixed', got '{self.objects_law}'")
        if self.objects_mean < 0 or self.objects_max < 0:
            raise ConfigError("objects_mean and objects_max must be >= 0")
        if not 0.0 <= self.small_fraction <= 1.0:
            raise ConfigError(f"small_fraction must be in [0, 1], got {self.small_fraction}")
        if self.fixed_area_ratio is not None and not 0.0 < self.fixed_area_ratio <= 1.0:
            raise ConfigError("fixed_area_ratio must be in (0, 1]")
        lo, hi = self.aspect_range
        if not 0 < lo <= hi:
            raise ConfigError(f"aspect_range must satisfy 0 < lo <= hi, got {self.aspect_range}")
        lo, hi = self.contrast_range
        if not 0 < lo <= hi:
            raise ConfigError(f"contrast_range must be positive with lo <= hi, got {self.contrast_range}")
        if self.num_face_classes is not None and not 0 <= self.num_face_classes <= self.num_classes:
            raise ConfigError("num_face_classes must be within [0, num_classes]")

    @property
    def face_classes(self) -> int:
        if self.num_face_classes is not None:
            return self.num_face_classes
        return min(self.num_classes, max(1, int(round(self.num_classes * 8 / 33))))

    def class_probabilities(self) -> np.ndarray:
        k = self.num_classes
        if self.class_law == "uniform":
            return np.full(k, 1.0 / k)
        weights = 1.0 / np.arange(1, k + 1, dtype=np.float64) ** self.zipf_s
        return weights / weights.sum()

    def category_names(self) -> List[str]:
        """Taxonomy labels when K fits, ``class_<id>`` otherwise."""
        faces = PRIVACY_TAXONOMY["human_presence"]
        glyphs = [
            name for domain, names in PRIVACY_TAXONOMY.items()
            if domain != "human_presence" for name in names
        ]
        names = []
        for cid in range(self.num_classes):
            if self.num_classes <= 33 and cid < self.face_classes and cid < len(faces):
                names.append(faces[cid])
            elif self.num_classes <= 33 and cid >= self.face_classes and cid - self.face_classes < len(glyphs):
                names.append(glyphs[cid - self.face_classes])
            else:
                names.append(f"class_{cid}")
        return names

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["aspect_range"] = list(self.aspect_range)
        data["contrast_range"] = list(self.contrast_range)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "SceneConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown scene config key(s): {sorted(unknown)}")
        data = dict(data)
        for key in ("aspect_range", "contrast_range"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        return cls(**data)


class Scene(NamedTuple):
    raster: np.ndarray  # uint8 H×W or H×W×3
    boxes: List[BBox]
    skipped: int
    contrasts: List[float]


# ------------------------------------------------------------------
# Rendering
# ------------------------------------------------------------------


def _background(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = config.image_height, config.image_width
    noise = gaussian_filter(rng.standard_normal((h, w)), sigma=1.5)
    noise = noise / (noise.std() + 1e-12) * 0.06
    gy, gx = rng.uniform(-0.15, 0.15, size=2)
    ys, xs = np.mgrid[0:h, 0:w]
    gradient = gx * (xs / w - 0.5) + gy * (ys / h - 0.5)
    return 0.5 + noise + gradient


def _object_size(config: SceneConfig, rng: np.random.Generator) -> Tuple[int, int]:
    area = config.image_height * config.image_width
    if config.fixed_area_ratio is not None:
        ratio = config.fixed_area_ratio
    elif rng.random() < config.small_fraction:
        ratio = rng.uniform(0.01, 0.085)
    else:
        ratio = rng.uniform(0.12, 0.30)
    lo, hi = config.aspect_range
    aspect = np.exp(rng.uniform(np.log(lo), np.log(hi)))  # w / h
    w = int(round(np.sqrt(ratio * area * aspect)))
    h = int(round(ratio * area / max(w, 1)))
    w = int(np.clip(w, MIN_SIDE, config.image_width))
    h = int(np.clip(h, MIN_SIDE, config.image_height))
    return h, w


def glyph_template(config: SceneConfig, class_id: int) -> np.ndarray:
    """Binary stroke grid for one glyph class; identical across images."""
    rng = derive_rng(config.seed, _TEMPLATE_STREAM + class_id)
    rows, cols = 3 + class_id % 3, 4 + class_id % 5
    strokes = rng.random((rows, cols)) < 0.5
    # every other row carries a horizontal stroke, like lines of text
    strokes[::2, :] |= rng.random((len(strokes[::2]), cols)) < 0.7
    return strokes


def _render_glyph(template: np.ndarray, h: int, w: int) -> np.ndarray:
    rows = (np.arange(h) * template.shape[0]) // h
    cols = (np.arange(w) * template.shape[1]) // w
    pattern = template[rows][:, cols].astype(np.float64)
    pattern[[0, -1], :] = 1.0
    pattern[:, [0, -1]] = 1.0
    return pattern


def _render_blob(class_id: int, h: int, w: int) -> Tuple[np.ndarray, np.ndarray]:
    ys = (np.arange(h) + 0.5 - h / 2.0) / (h / 2.0)
    xs = (np.arange(w) + 0.5 - w / 2.0) / (w / 2.0)
    r2 = ys[:, None] ** 2 + xs[None, :] ** 2
    mask = r2 <= 1.0
    falloff = 1.0 + 0.5 * (class_id % 8)
    return np.exp(-falloff * r2), mask


def _box_overlaps(box: Tuple[int, int, int, int], placed: Sequence[Tuple[int, int, int, int]]) -> bool:
    x, y, w, h = box
    for px, py, pw, ph in placed:
        if x < px + pw and px < x + w and y < py + ph and py < y + h:
            return True
    return False


def _sample_count(config: SceneConfig, rng: np.random.Generator) -> int:
    if config.objects_law == "fixed":
        n = int(round(config.objects_mean))
    else:
        n = int(rng.poisson(config.objects_mean)) if config.objects_mean > 0 else 0
    return min(n, config.objects_max)


def generate_scene(config: SceneConfig, rng: np.random.Generator) -> Scene:
    """
    Render one scene; returns the raster, tight boxes and the number of
    objects skipped after ``MAX_PLACEMENT_ATTEMPTS`` failed placements.
    """
    H, W = config.image_height, config.image_width
    image = _background(config, rng)
    scene_var = float(image.var())
    probs = config.class_probabilities()

    boxes: List[BBox] = []
    contrasts: List[float] = []
    placed: List[Tuple[int, int, int, int]] = []
    skipped = 0

    for _ in range(_sample_count(config, rng)):
        class_id = int(rng.choice(config.num_classes, p=probs))
        h, w = _object_size(config, rng)
        position = None
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            x = int(rng.integers(0, W - w + 1))
            y = int(rng.integers(0, H - h + 1))
            if not _box_overlaps((x, y, w, h), placed):
                position = (x, y)
                break
        if position is None:
            skipped += 1
            continue
        x, y = position

        if class_id < config.face_classes:
            pattern, mask = _render_blob(class_id, h, w)
        else:
            pattern = _render_glyph(glyph_template(config, class_id), h, w)
            mask = np.ones((h, w), dtype=bool)

        contrast = float(rng.uniform(*config.contrast_range))
        values = pattern[mask]
        spread = values.std()
        z = (pattern - values.mean()) / spread if spread > 0 else np.zeros_like(pattern)
        polarity = 1.0 if rng.random() < 0.5 else -1.0
        region = image[y:y + h, x:x + w]
        local_mean = float(region[mask].mean())
        patch = local_mean + polarity * np.sqrt(contrast * scene_var) * z
        region[mask] = (1.0 - BLEND_ALPHA) * region[mask] + BLEND_ALPHA * patch[mask]

        ys, xs = np.nonzero(mask)
        tight = (x + int(xs.min()), y + int(ys.min()),
                 int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
        placed.append(tight)
        boxes.append(BBox(*map(float, tight), class_id=class_id))
        contrasts.append(contrast)

    if config.channels == 3:
        tint = 1.0 + rng.uniform(-0.05, 0.05, size=3)
        planes = np.stack([image * t for t in tint])
    else:
        planes = image[None]
    raster = np.clip(np.rint(planes * 255.0), 0, 255).astype(np.uint8)
    raster = raster[0] if config.channels == 1 else np.moveaxis(raster, 0, -1)

    if skipped:
        logger.debug("Scene skipped %d object(s) after %d placement attempts", skipped, MAX_PLACEMENT_ATTEMPTS)
    return Scene(raster, boxes, skipped, contrasts)


# ------------------------------------------------------------------
# Datasets
# ------------------------------------------------------------------


@dataclass
class SynthDataset:
    root: Path
    annotations: AnnotationSet
    manifest: Dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.annotations.n_images

    def samples(self) -> List[Tuple[np.ndarray, List[BBox]]]:
        """(C×H×W float image, GT boxes) pairs in image-id order."""
        out = []
        for image_id in self.annotations.images["id"].astype(int):
            raster = read_raster(self.annotations.image_path(image_id))
            out.append((to_chw(raster), self.annotations.boxes_for(image_id)))
        return out


def _scene_job(config: SceneConfig, index: int) -> Scene:
    return generate_scene(config, derive_rng(config.seed, index))


def generate_dataset(
    config: SceneConfig,
    n_images: int,
    out_dir: Union[str, Path],
    n_jobs: Optional[int] = None,
    progress: bool = True,
) -> SynthDataset:
    """
    Generate ``n_images`` scenes into ``out_dir``.

    Layout: ``images/NNNNNN.pgm|ppm``, ``annotations.json``, ``manifest.json``.
    Image ``i`` draws from the stream derived from (seed, i), so the output
    does not depend on ``n_jobs``.
    """
    if n_images < 1:
        raise ConfigError(f"n_images must be >= 1, got {n_images}")
    out_dir = Path(out_dir)
    n_jobs = n_jobs or settings.threads
    suffix = ".pgm" if config.channels == 1 else ".ppm"

    indices = tqdm(range(n_images), desc="synth", disable=not progress, leave=False)
    scenes = Parallel(n_jobs=n_jobs)(delayed(_scene_job)(config, i) for i in indices)

    images, annotations = [], []
    class_counts = np.zeros(config.num_classes, dtype=np.int64)
    skipped = small = 0
    contrasts: List[float] = []
    image_digests = []
    for i, scene in enumerate(scenes):
        file_name = f"images/{i:06d}{suffix}"
        path = DataHandler(out_dir / file_name).save(scene.raster)
        image_digests.append(sha256_bytes(path.read_bytes()))
        images.append({"id": i, "file_name": file_name,
                       "width": config.image_width, "height": config.image_height})
        for box in scene.boxes:
            annotations.append({
                "id": len(annotations), "image_id": i, "category_id": box.class_id,
                "bbox": [int(box.x), int(box.y), int(box.w), int(box.h)],
            })
            class_counts[box.class_id] += 1
            if box.area / (config.image_width * config.image_height) < SMALL_AREA_RATIO:
                small += 1
        skipped += scene.skipped
        contrasts.extend(scene.contrasts)

    document = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": i, "name": n} for i, n in enumerate(config.category_names())],
    }
    ann_bytes = (canonical_json(document) + "\n").encode("utf-8")
    ann_path = out_dir / "annotations.json"
    ann_path.parent.mkdir(parents=True, exist_ok=True)
    ann_path.write_bytes(ann_bytes)

    n_objects = len(annotations)
    manifest = {
        "config": config.to_dict(),
        "seed": config.seed,
        "n_images": n_images,
        "sha256": sha256_bytes(ann_bytes),
        "images_sha256": sha256_bytes("".join(image_digests).encode("ascii")),
        "tallies": {
            "class_counts": class_counts.tolist(),
            "n_objects": n_objects,
            "skipped_objects": skipped,
            "small_objects": small,
            "small_object_fraction": small / n_objects if n_objects else 0.0,
            "mean_contrast": float(np.mean(contrasts)) if contrasts else 0.0,
            "face_category_ids": list(range(config.face_classes)),
        },
    }
    DataHandler(out_dir / "manifest.json").save(manifest)

    if skipped:
        logger.warning("%d object(s) skipped after failed placement", skipped)
    logger.info("Wrote %d images / %d objects to %s", n_images, n_objects, out_dir)
    return SynthDataset(out_dir, parse_annotations(document, root=out_dir), manifest)


def load_dataset(root: Union[str, Path]) -> SynthDataset:
    root = Path(root)
    annotations = load_annotations(root / "annotations.json")
    manifest_path = root / "manifest.json"
    manifest = DataHandler(manifest_path).load() if manifest_path.exists() else {}
    return SynthDataset(root, annotations, manifest)
