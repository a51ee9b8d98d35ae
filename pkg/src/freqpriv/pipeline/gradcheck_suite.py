"""
Gradient verification over every registered op and the full training loss.

Each op is evaluated at a small random point; the full pipeline runs on a
tiny variant-IV detector (C=4, 16×16 input) with the frequency pairs and the
target assignment held fixed so the objective is smooth in the parameters.
"""

import logging
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from freqpriv.core.errors import NumericalError
from freqpriv.detection.boxes import BBox
from freqpriv.detection.losses import FreqPair, loss_and_grads
from freqpriv.detection.model import STRIDE, DetectorHParams, DetectorModel
from freqpriv.detection.roi import roi_crop
from freqpriv.detection.targets import assign_targets
from freqpriv.frequency.loss import radial_weight
from freqpriv.tensor.gradcheck import DEFAULT_TOLERANCE, gradcheck, gradcheck_scalar
from freqpriv.tensor.ops import OPS

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["check", "target", "max_rel_error", "tolerance", "passed", "message"]


class OpCase(NamedTuple):
    inputs: List[np.ndarray]
    attrs: Dict[str, Any]
    eps: float


def _complex(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _detection_case(rng: np.random.Generator) -> OpCase:
    k, grid = 3, (4, 4)
    gt = [BBox(2.0, 3.0, 6.0, 5.0, class_id=1), BBox(9.0, 8.0, 5.0, 7.0, class_id=2)]
    assignment = assign_targets(gt, grid, STRIDE)
    head = rng.standard_normal((1 + k + 4,) + grid) * 0.5
    return OpCase([head], {"assignment": assignment, "num_classes": k}, 1e-6)


def op_cases(seed: int = 0) -> Dict[str, OpCase]:
    """One evaluation point per registered op name."""
    rng = np.random.default_rng(seed)
    n = rng.standard_normal
    return {
        "dft2": OpCase([n((2, 4, 4))], {"backend": "reference"}, 1e-3),
        "idft2": OpCase([_complex(rng, (2, 4, 4))], {"backend": "reference"}, 1e-3),
        "apply_gate": OpCase([_complex(rng, (2, 4, 4)), n((2, 4, 4))], {}, 1e-6),
        "spectral_distance": OpCase(
            [_complex(rng, (2, 4, 4)), _complex(rng, (2, 4, 4))],
            {"weight": radial_weight(4, 4, 2.0).matrix},
            1e-6,
        ),
        "conv1x1": OpCase([n((3, 4, 4)), n((2, 3)), n(2)], {}, 1e-3),
        "conv3x3s2": OpCase([n((2, 6, 6)), n((3, 2, 3, 3)), n(3)], {}, 1e-3),
        "bilinear_resize": OpCase(
            [n((2, 5, 5))],
            {"out_h": 3, "out_w": 4, "window": (0.5, 1.0, 3.0, 2.5)},
            1e-3,
        ),
        "sigmoid": OpCase([n((2, 3, 3))], {}, 1e-6),
        "silu": OpCase([n((2, 3, 3))], {}, 1e-6),
        "add": OpCase([n((2, 3, 3)), n((2, 3, 3))], {}, 1e-3),
        "scale": OpCase([n((2, 3, 3))], {"factor": 0.3}, 1e-3),
        "concat_channels": OpCase([n((2, 3, 3)), n((1, 3, 3))], {}, 1e-3),
        "detection_loss": _detection_case(rng),
    }


# ------------------------------------------------------------------
# Full pipeline
# ------------------------------------------------------------------


def tiny_model(seed: int = 0) -> DetectorModel:
    """C=4, K=2, 16×16 variant-IV detector with a non-trivial neck."""
    hp = DetectorHParams.for_variant(
        "IV", in_channels=1, width=4, num_classes=2,
        image_height=16, image_width=16, gate_init=0.0, roi_size=4,
    )
    model = DetectorModel.create(hp, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name in ("neck.gate_logits", "neck.fusion_weight", "neck.fusion_bias", "head.weight"):
        model.params[name] = rng.standard_normal(model.params[name].shape) * 0.5
    return model


def pipeline_case(seed: int = 0):
    rng = np.random.default_rng(seed + 2)
    model = tiny_model(seed)
    image = rng.random((1, 16, 16))
    gt = [BBox(2.0, 3.0, 6.0, 5.0, class_id=0), BBox(8.5, 7.0, 5.0, 6.0, class_id=1)]
    pairs = [
        FreqPair(0, BBox(2.7, 3.4, 5.5, 4.8, class_id=0), gt[0]),
        FreqPair(1, BBox(7.9, 7.6, 5.6, 5.1, class_id=1), gt[1]),
    ]
    return model, image, gt, pairs


def check_total_loss(seed: int = 0, eps: float = 1e-5) -> Dict[str, float]:
    """Max relative error of dL_total/dθ per parameter group."""
    model, image, gt, pairs = pipeline_case(seed)
    hp = model.hparams
    neck = model.forward(image).neck
    targets = [roi_crop(neck, p.target, hp.roi_size).values for p in pairs]

    def fn(params: Dict[str, np.ndarray]):
        perturbed = DetectorModel(hparams=hp, params=params, frozen=list(model.frozen))
        result = loss_and_grads(
            perturbed, image, gt,
            beta=0.5, lam=hp.lam, roi_size=hp.roi_size,
            use_freq=True, pairs=pairs, target_crops=targets,
        )
        return result.total, result.grads

    return gradcheck_scalar(fn, model.params, eps=eps, name="total_loss")


# ------------------------------------------------------------------
# Suite
# ------------------------------------------------------------------


def _row(check: str, target: str, error: Optional[float], tol: float, message: str = "") -> Dict:
    passed = error is not None and error <= tol
    return {
        "check": check,
        "target": target,
        "max_rel_error": np.nan if error is None else float(error),
        "tolerance": tol,
        "passed": bool(passed),
        "message": message,
    }


def run_gradcheck_suite(
    tolerance: float = DEFAULT_TOLERANCE,
    seed: int = 0,
    ops: Optional[Sequence[str]] = None,
    include_pipeline: bool = True,
    cases: Optional[Callable[[int], Dict[str, OpCase]]] = None,
) -> pd.DataFrame:
    """
    One row per registered op plus one row per parameter group of the full
    loss. Failures (including non-finite intermediates) become rows with
    ``passed=False`` rather than exceptions.
    """
    cases_by_name = (cases or op_cases)(seed)
    names = sorted(OPS) if ops is None else list(ops)
    rows = []
    for name in names:
        op = OPS[name]
        case = cases_by_name.get(name)
        if case is None:
            rows.append(_row("op", name, None, tolerance, "no evaluation point registered"))
            logger.warning("gradcheck: no evaluation point for op '%s'", name)
            continue
        try:
            error = gradcheck(op, case.inputs, eps=case.eps, attrs=case.attrs, seed=seed)
            rows.append(_row("op", name, error, tolerance))
        except NumericalError as exc:
            rows.append(_row("op", name, None, tolerance, str(exc)))

    if include_pipeline:
        try:
            for group, error in check_total_loss(seed).items():
                rows.append(_row("total_loss", group, error, tolerance))
        except NumericalError as exc:
            rows.append(_row("total_loss", "*", None, tolerance, str(exc)))

    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    failed = report[~report["passed"]]
    if len(failed):
        logger.warning("gradcheck failures: %s", ", ".join(failed["target"]))
    else:
        logger.info("gradcheck: %d checks passed", len(report))
    return report
