"""
Adaptive spectral gating: a learnable real logit grid whose sigmoid is
multiplied into every complex frequency bin.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from freqpriv.core.errors import NumericalError, ShapeError
from freqpriv.tensor.ops import APPLY_GATE, sigmoid
from freqpriv.tensor.types import ArrayLike, Spectrum, as_array

logger = logging.getLogger(__name__)

DEFAULT_GATE_INIT = 2.0
# sigmoid(40) == 1.0 in double precision: an effectively disabled gate
PASS_THROUGH_LOGIT = 40.0


@dataclass
class SpectralGate:
    """
    Learnable logits W_gate of shape C×H0×W0.

    ``frozen`` gates are excluded from optimizer updates.
    """

    logits: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64, copy=True)
        if self.logits.ndim != 3 or min(self.logits.shape) < 1:
            raise ShapeError(f"Gate logits must be C×H×W, got {self.logits.shape}")
        if not np.all(np.isfinite(self.logits)):
            raise NumericalError("Gate logits must be finite")

    @classmethod
    def create(
        cls,
        channels: int,
        height: int,
        width: int,
        init: float = DEFAULT_GATE_INIT,
        frozen: bool = False,
    ) -> "SpectralGate":
        return cls(np.full((channels, height, width), float(init)), frozen=frozen)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.logits.shape  # type: ignore[return-value]

    @property
    def reference_dims(self) -> Tuple[int, int]:
        return self.logits.shape[1], self.logits.shape[2]

    def mask(self) -> np.ndarray:
        """Soft mask sigmoid(W_gate), elementwise in (0, 1)."""
        return sigmoid(self.logits)


def apply_gate(f: ArrayLike, gate: SpectralGate) -> Spectrum:
    """F̃_c(u,v) = F_c(u,v)·sigmoid(W_gate,c(u,v)); no resampling on mismatch."""
    values = as_array(f)
    if values.shape != gate.shape:
        raise ShapeError(
            f"Spectrum {values.shape} does not match gate {gate.shape}; "
            "gate dims are fixed at construction"
        )
    return Spectrum(APPLY_GATE(values, gate.logits))


def gate_band_profile(gate: SpectralGate, n_bands: int = 4) -> pd.DataFrame:
    """
    Mean gate activation per radial frequency band and channel.

    Bands split the normalized wrap-aware radius r ∈ [0, 1] into equal
    intervals; band 0 contains the DC bin.
    """
    from freqpriv.frequency.loss import radial_distance

    h, w = gate.reference_dims
    r = radial_distance(h, w)
    band = np.minimum((r * n_bands).astype(int), n_bands - 1)
    mask = gate.mask()

    rows = []
    for c in range(gate.shape[0]):
        for b in range(n_bands):
            sel = band == b
            if not np.any(sel):
                continue
            rows.append({
                "channel": c,
                "band": b,
                "r_low": b / n_bands,
                "r_high": (b + 1) / n_bands,
                "n_bins": int(sel.sum()),
                "mean_activation": float(mask[c][sel].mean()),
            })
    return pd.DataFrame(rows)
