"""
Frequency-consistency loss.

    L = (1/N)·Σ_i Σ_{c,u,v} |w(u,v)·(dft2(P_i) − dft2(T_i))_c(u,v)|²

with the static radial weight w(r) = 1 + λ·r. The weight sits inside the
squared magnitude, so a bin's effective weight is w².
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from freqpriv.core.errors import ShapeError
from freqpriv.tensor.ops import ADD, DFT2, SCALE, SPECTRAL_DISTANCE
from freqpriv.tensor.tape import Tape, Var
from freqpriv.tensor.types import ArrayLike, as_array

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 2.0


def radial_distance(height: int, width: int) -> np.ndarray:
    """
    Wrap-aware radius normalized to [0, 1]; DC maps to 0.

    d(u,v) = sqrt(min(u, H−u)² + min(v, W−v)²), divided by its grid maximum.
    A 1×1 grid is all zeros.
    """
    if height < 1 or width < 1:
        raise ShapeError(f"Radial grid needs H, W >= 1, got {height}×{width}")
    u = np.arange(height)
    v = np.arange(width)
    du = np.minimum(u, height - u)
    dv = np.minimum(v, width - v)
    d = np.sqrt(du[:, None] ** 2 + dv[None, :] ** 2)
    peak = d.max()
    if peak == 0:
        return np.zeros((height, width))
    return d / peak


@dataclass(frozen=True)
class RadialWeight:
    height: int
    width: int
    lam: float
    matrix: np.ndarray


def radial_weight(height: int, width: int, lam: float = DEFAULT_LAMBDA) -> RadialWeight:
    """w(u,v) = 1 + λ·r(u,v), with w(DC) = 1 and w ≥ 1 for λ ≥ 0."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    matrix = 1.0 + lam * radial_distance(height, width)
    matrix.setflags(write=False)
    return RadialWeight(height, width, float(lam), matrix)


@dataclass(frozen=True)
class FreqLossResult:
    value: float
    n_pairs: int

    @property
    def no_matched_targets(self) -> bool:
        return self.n_pairs == 0


def freq_loss_graph(
    tape: Tape,
    predicted: Sequence[Var],
    targets: Sequence[np.ndarray],
    lam: float = DEFAULT_LAMBDA,
    dft_backend: str = "reference",
) -> Optional[Var]:
    """
    Record the loss over (P_i, T_i) pairs on ``tape``.

    Targets enter as constants (no gradient through the T branch). Returns
    None when there are no pairs.
    """
    if len(predicted) != len(targets):
        raise ShapeError(f"{len(predicted)} predicted crops vs {len(targets)} targets")
    if not predicted:
        return None

    total: Optional[Var] = None
    weight_cache = {}
    for p, t in zip(predicted, targets):
        t = np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise ShapeError(f"Crop shapes differ: predicted {p.shape}, target {t.shape}")
        hw = p.shape[-2:]
        if hw not in weight_cache:
            weight_cache[hw] = radial_weight(hw[0], hw[1], lam).matrix
        fp = tape.apply(DFT2, p, backend=dft_backend)
        ft = tape.constant(DFT2(t, backend=dft_backend))
        term = tape.apply(SPECTRAL_DISTANCE, fp, ft, weight=weight_cache[hw])
        total = term if total is None else tape.apply(ADD, total, term)

    return tape.apply(SCALE, total, factor=1.0 / len(predicted))


def freq_consistency_loss(
    predicted: Sequence[ArrayLike],
    targets: Sequence[ArrayLike],
    lam: float = DEFAULT_LAMBDA,
    dft_backend: str = "reference",
) -> FreqLossResult:
    """Loss value for already-cropped, equally sized feature pairs."""
    if len(predicted) != len(targets):
        raise ShapeError(f"{len(predicted)} predicted crops vs {len(targets)} targets")
    if not predicted:
        logger.debug("Frequency loss: no matched targets")
        return FreqLossResult(0.0, 0)

    tape = Tape()
    p_vars: List[Var] = [tape.constant(as_array(p)) for p in predicted]
    out = freq_loss_graph(tape, p_vars, [as_array(t) for t in targets], lam, dft_backend)
    return FreqLossResult(float(out.value), len(predicted))
