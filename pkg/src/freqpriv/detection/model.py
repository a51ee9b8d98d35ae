"""
Minimal single-scale anchor-free detector.

    backbone: conv3x3s2 → SiLU → conv3x3s2 → SiLU   (stride 4, C channels)
    neck:     one FDAF block (optional)
    head:     conv1x1 → 1 + K + 4 channels per cell
              [objectness | K class logits | tx, ty, tw, th]
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from freqpriv.core.errors import ShapeError
from freqpriv.frequency.fdaf import FdafBlock, fdaf_graph
from freqpriv.frequency.gating import DEFAULT_GATE_INIT, PASS_THROUGH_LOGIT, SpectralGate
from freqpriv.frequency.loss import DEFAULT_LAMBDA
from freqpriv.tensor.ops import CONV1X1, CONV3X3S2, SILU
from freqpriv.tensor.tape import Tape, Var
from freqpriv.tensor.types import ArrayLike, FeatureMap, as_array

logger = logging.getLogger(__name__)

STRIDE = 4
OBJECTNESS_PRIOR_LOGIT = -4.0

# ablation variants: (FDAF present, gate learnable, frequency loss on)
VARIANTS: Dict[str, Tuple[bool, bool, bool]] = {
    "I": (False, False, False),
    "II": (True, False, False),
    "III": (True, True, False),
    "IV": (True, True, True),
}


@dataclass(frozen=True)
class DetectorHParams:
    in_channels: int = 1
    width: int = 16
    num_classes: int = 8
    image_height: int = 64
    image_width: int = 64
    use_fdaf: bool = True
    gate_frozen: bool = False
    gate_init: float = DEFAULT_GATE_INIT
    beta: float = 0.05
    lam: float = DEFAULT_LAMBDA
    roi_size: int = 16
    size_prior: float = 8.0
    dft_backend: str = "reference"

    def __post_init__(self):
        if self.image_height % STRIDE or self.image_width % STRIDE:
            raise ShapeError(
                f"Image dims must be divisible by {STRIDE}, got "
                f"{self.image_height}×{self.image_width}"
            )
        if min(self.in_channels, self.width, self.num_classes) < 1:
            raise ValueError("in_channels, width and num_classes must be >= 1")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")

    @property
    def grid(self) -> Tuple[int, int]:
        return self.image_height // STRIDE, self.image_width // STRIDE

    @property
    def head_channels(self) -> int:
        return 1 + self.num_classes + 4

    @classmethod
    def for_variant(cls, variant: str, **kwargs) -> "DetectorHParams":
        if variant not in VARIANTS:
            raise ValueError(f"Unknown variant '{variant}', expected one of {list(VARIANTS)}")
        use_fdaf, gate_learnable, _ = VARIANTS[variant]
        params = dict(kwargs)
        params["use_fdaf"] = use_fdaf
        params["gate_frozen"] = use_fdaf and not gate_learnable
        if params["gate_frozen"]:
            params["gate_init"] = PASS_THROUGH_LOGIT
        return cls(**params)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ForwardOutput:
    head: np.ndarray
    neck: np.ndarray


@dataclass
class DetectorModel:
    hparams: DetectorHParams
    params: Dict[str, np.ndarray]
    frozen: List[str] = field(default_factory=list)

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def create(cls, hparams: DetectorHParams, seed: int = 0) -> "DetectorModel":
        rng = np.random.default_rng(seed)
        c_in, c, k = hparams.in_channels, hparams.width, hparams.num_classes
        gh, gw = hparams.grid

        def he(shape, fan_in):
            return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

        params: Dict[str, np.ndarray] = {
            "backbone.conv1.weight": he((c, c_in, 3, 3), c_in * 9),
            "backbone.conv1.bias": np.zeros(c),
            "backbone.conv2.weight": he((c, c, 3, 3), c * 9),
            "backbone.conv2.bias": np.zeros(c),
        }
        frozen: List[str] = []
        if hparams.use_fdaf:
            block = FdafBlock.create(
                c, gh, gw,
                gate_init=hparams.gate_init,
                gate_frozen=hparams.gate_frozen,
                dft_backend=hparams.dft_backend,
            )
            params["neck.gate_logits"] = block.gate.logits
            params["neck.fusion_weight"] = block.fusion_weight
            params["neck.fusion_bias"] = block.fusion_bias
            if hparams.gate_frozen:
                frozen.append("neck.gate_logits")

        head_bias = np.zeros(hparams.head_channels)
        head_bias[0] = OBJECTNESS_PRIOR_LOGIT
        params["head.weight"] = rng.standard_normal((hparams.head_channels, c)) * 0.01
        params["head.bias"] = head_bias

        logger.info(
            "Built detector: C=%d K=%d grid=%dx%d fdaf=%s gate_frozen=%s (%d parameters)",
            c, k, gh, gw, hparams.use_fdaf, hparams.gate_frozen,
            sum(p.size for p in params.values()),
        )
        return cls(hparams=hparams, params=params, frozen=frozen)

    def copy(self) -> "DetectorModel":
        return DetectorModel(
            hparams=self.hparams,
            params={k: v.copy() for k, v in self.params.items()},
            frozen=list(self.frozen),
        )

    def trainable(self) -> List[str]:
        return [name for name in self.params if name not in self.frozen]

    def fdaf_block(self) -> Optional[FdafBlock]:
        """FDAF parameters as a block (copies), or None when the neck is empty."""
        if not self.hparams.use_fdaf:
            return None
        return FdafBlock(
            gate=SpectralGate(self.params["neck.gate_logits"], frozen=self.hparams.gate_frozen),
            fusion_weight=self.params["neck.fusion_weight"],
            fusion_bias=self.params["neck.fusion_bias"],
            dft_backend=self.hparams.dft_backend,
        )

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def _check_image(self, image: np.ndarray) -> None:
        hp = self.hparams
        expected = (hp.in_channels, hp.image_height, hp.image_width)
        if image.shape != expected:
            raise ShapeError(f"Image shape {image.shape} does not match model input {expected}")

    def graph(
        self,
        tape: Tape,
        image: np.ndarray,
        differentiable: bool = True,
    ) -> Tuple[Var, Var]:
        """
        Record the forward pass on ``tape``.

        Trainable parameters become named leaves when ``differentiable``;
        frozen ones are constants.
        """
        image = np.asarray(image, dtype=np.float64)
        self._check_image(image)
        p: Dict[str, Var] = {}
        for name, value in self.params.items():
            if differentiable and name not in self.frozen:
                p[name] = tape.leaf(name, value)
            else:
                p[name] = tape.constant(value)

        x = tape.constant(image)
        h = tape.apply(CONV3X3S2, x, p["backbone.conv1.weight"], p["backbone.conv1.bias"])
        h = tape.apply(SILU, h)
        h = tape.apply(CONV3X3S2, h, p["backbone.conv2.weight"], p["backbone.conv2.bias"])
        h = tape.apply(SILU, h)

        if self.hparams.use_fdaf:
            neck = fdaf_graph(
                tape, h,
                p["neck.gate_logits"], p["neck.fusion_weight"], p["neck.fusion_bias"],
                dft_backend=self.hparams.dft_backend,
            )
        else:
            neck = h

        head = tape.apply(CONV1X1, neck, p["head.weight"], p["head.bias"])
        return head, neck

    def forward(self, image: ArrayLike) -> ForwardOutput:
        """Raw head map (1+K+4)×(H/4)×(W/4) and the neck feature."""
        tape = Tape()
        head, neck = self.graph(tape, as_array(image), differentiable=False)
        return ForwardOutput(head=head.value, neck=neck.value)


def forward(model: DetectorModel, image: ArrayLike) -> Tuple[np.ndarray, FeatureMap]:
    out = model.forward(image)
    return out.head, FeatureMap(out.neck)


def without_fdaf(model: DetectorModel) -> DetectorModel:
    """Same weights with the neck block structurally removed."""
    hp = DetectorHParams(**{**model.hparams.to_dict(), "use_fdaf": False, "gate_frozen": False})
    params = {k: v.copy() for k, v in model.params.items() if not k.startswith("neck.")}
    return DetectorModel(hparams=hp, params=params, frozen=[])
