"""
Value types of the numeric kernel.

FeatureMap is a real C×H×W activation; Spectrum is its complex
frequency-domain counterpart. Both copy their input and are read-only, so
they can be shared between threads.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from freqpriv.core.errors import NumericalError, ShapeError

ArrayLike = Union[np.ndarray, "FeatureMap", "Spectrum"]


def _freeze(values: np.ndarray, dtype, kind: str) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != 3:
        raise ShapeError(f"{kind} must be C×H×W, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{kind} dimensions must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{kind} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureMap:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values, np.float64, "FeatureMap"))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class Spectrum:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values, np.complex128, "Spectrum"))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Spectrum):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)


def as_array(x: ArrayLike) -> np.ndarray:
    """Underlying ndarray of a FeatureMap/Spectrum, or the array itself."""
    if isinstance(x, (FeatureMap, Spectrum)):
        return x.values
    return np.asarray(x)
