"""PGM/PPM raster I/O (binary P5/P6 written, plain P2/P3 also readable)."""

import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from freqpriv.core.errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

RASTER_SUFFIXES = {".pgm", ".ppm"}


def read_raster(path: Union[str, Path]) -> np.ndarray:
    """8-bit raster as uint8, H×W for gray or H×W×3 for color."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB" if len(img.getbands()) >= 3 else "L")
            return np.asarray(img, dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as exc:
        logger.error("Failed to read raster %s: %s", path, exc)
        raise ValidationError(f"Cannot read raster {path}: {exc}") from exc


def write_raster(path: Union[str, Path], raster: np.ndarray) -> Path:
    """Write P5 (H×W) or P6 (H×W×3); values must already be uint8."""
    path = Path(path)
    raster = np.asarray(raster)
    if raster.dtype != np.uint8:
        raise ValueError(f"Raster must be uint8, got {raster.dtype}")
    if raster.ndim == 2:
        mode, expected = "L", ".pgm"
    elif raster.ndim == 3 and raster.shape[2] == 3:
        mode, expected = "RGB", ".ppm"
    else:
        raise ShapeError(f"Raster must be H×W or H×W×3, got {raster.shape}")
    if path.suffix.lower() != expected:
        logger.warning("Writing %s raster to %s (expected suffix %s)", mode, path.name, expected)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(raster).save(path, format="PPM")
    except OSError as exc:
        logger.error("Failed to write raster %s: %s", path, exc)
        raise
    return path


def to_chw(raster: np.ndarray) -> np.ndarray:
    """uint8 raster to C×H×W float64 in [0, 1]."""
    values = np.asarray(raster, dtype=np.float64) / 255.0
    if values.ndim == 2:
        return values[None]
    return np.moveaxis(values, -1, 0)


def to_raster(values: np.ndarray) -> np.ndarray:
    """C×H×W intensities in [0, 1] to a uint8 raster (rounded, clipped)."""
    values = np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    if values.shape[0] == 1:
        return values[0]
    return np.moveaxis(values, 0, -1)


def raster_intensity(raster: np.ndarray) -> np.ndarray:
    """Gray intensity plane (H×W float64); color rasters are channel-averaged."""
    values = np.asarray(raster, dtype=np.float64)
    if values.ndim == 3:
        values = values.mean(axis=2)
    return values
