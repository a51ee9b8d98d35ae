"""
Frequency-domain attention fusion block.

    Y_spa = idft2(apply_gate(dft2(I)))
    out   = conv1x1(concat(I, Y_spa)) + I

The fusion conv starts at zero so a freshly built block is an exact
identity.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from freqpriv.core.errors import ShapeError
from freqpriv.frequency.gating import DEFAULT_GATE_INIT, SpectralGate
from freqpriv.tensor.ops import ADD, APPLY_GATE, CONCAT_CHANNELS, CONV1X1, DFT2, IDFT2
from freqpriv.tensor.tape import Tape, Var
from freqpriv.tensor.types import ArrayLike, FeatureMap, as_array

logger = logging.getLogger(__name__)


@dataclass
class FdafBlock:
    gate: SpectralGate
    fusion_weight: np.ndarray
    fusion_bias: np.ndarray
    dft_backend: str = field(default="reference")

    def __post_init__(self):
        self.fusion_weight = np.array(self.fusion_weight, dtype=np.float64, copy=True)
        self.fusion_bias = np.array(self.fusion_bias, dtype=np.float64, copy=True)
        c = self.channels
        if self.fusion_weight.shape != (c, 2 * c):
            raise ShapeError(
                f"Fusion weights must be {c}×{2 * c} (concat of input and "
                f"frequency branch), got {self.fusion_weight.shape}"
            )
        if self.fusion_bias.shape != (c,):
            raise ShapeError(f"Fusion bias must have {c} entries, got {self.fusion_bias.shape}")

    @classmethod
    def create(
        cls,
        channels: int,
        height: int,
        width: int,
        gate_init: float = DEFAULT_GATE_INIT,
        gate_frozen: bool = False,
        dft_backend: str = "reference",
    ) -> "FdafBlock":
        gate = SpectralGate.create(channels, height, width, init=gate_init, frozen=gate_frozen)
        return cls(
            gate=gate,
            fusion_weight=np.zeros((channels, 2 * channels)),
            fusion_bias=np.zeros(channels),
            dft_backend=dft_backend,
        )

    @property
    def channels(self) -> int:
        return self.gate.shape[0]

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            "gate_logits": self.gate.logits,
            "fusion_weight": self.fusion_weight,
            "fusion_bias": self.fusion_bias,
        }


def fdaf_graph(
    tape: Tape,
    x: Var,
    gate_logits: Var,
    fusion_weight: Var,
    fusion_bias: Var,
    dft_backend: str = "reference",
) -> Var:
    """Record one FDAF application on ``tape`` and return its output."""
    if x.shape != gate_logits.shape:
        raise ShapeError(
            f"FDAF input {x.shape} does not match gate reference dims {gate_logits.shape}"
        )
    spectrum = tape.apply(DFT2, x, backend=dft_backend)
    gated = tape.apply(APPLY_GATE, spectrum, gate_logits)
    y_spa = tape.apply(IDFT2, gated, backend=dft_backend)
    fused = tape.apply(CONV1X1, tape.apply(CONCAT_CHANNELS, x, y_spa), fusion_weight, fusion_bias)
    return tape.apply(ADD, fused, x)


def fdaf_forward(i: ArrayLike, block: FdafBlock) -> FeatureMap:
    """Evaluate the block on one feature map (no gradients recorded)."""
    tape = Tape()
    out = fdaf_graph(
        tape,
        tape.constant(as_array(i)),
        tape.constant(block.gate.logits),
        tape.constant(block.fusion_weight),
        tape.constant(block.fusion_bias),
        dft_backend=block.dft_backend,
    )
    return FeatureMap(out.value)
