"""
Deterministic SGD training of the detector on L_total.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from freqpriv.core.errors import ConfigError, NumericalError
from freqpriv.detection.boxes import BBox
from freqpriv.detection.losses import DEFAULT_MATCH_IOU, loss_and_grads
from freqpriv.detection.model import DetectorModel
from freqpriv.frequency.loss import DEFAULT_LAMBDA
from freqpriv.utils.helpers import chunks

logger = logging.getLogger(__name__)

# one training example: C×H×W image and its ground-truth boxes
Sample = Tuple[np.ndarray, List[BBox]]

TRACE_COLUMNS = [
    "step", "epoch", "total", "det", "objectness", "classification", "box",
    "freq", "beta_freq", "n_freq_pairs", "freq_active",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.937
    weight_decay: float = 5e-4
    beta: float = 0.05
    lam: float = DEFAULT_LAMBDA
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    roi_size: int = 16
    freq_warmup_steps: int = 0
    use_freq_loss: bool = True
    hflip: bool = False
    match_iou: float = DEFAULT_MATCH_IOU
    max_steps: Optional[int] = None
    progress: bool = True

    def __post_init__(self):
        for name in ("lr", "momentum", "weight_decay", "beta", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("epochs", "batch_size", "roi_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.freq_warmup_steps < 0:
            raise ConfigError("freq_warmup_steps must be >= 0")
        if not 0.0 < self.match_iou <= 1.0:
            raise ConfigError(f"match_iou must be in (0, 1], got {self.match_iou}")

    def to_dict(self) -> Dict:
        return asdict(self)


# ------------------------------------------------------------------
# Optimizer
# ------------------------------------------------------------------


class SGD:
    """
    Momentum SGD with decoupled weight decay.

        v ← μ·v + g
        p ← (1 − wd)·p − lr·v

    Only the named trainable groups are touched.
    """

    def __init__(self, params: Dict[str, np.ndarray], trainable: Sequence[str],
                 lr: float, momentum: float, weight_decay: float):
        self.params = params
        self.trainable = list(trainable)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(params[name]) for name in self.trainable}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        for name in self.trainable:
            v = self.momentum * self.velocity[name] + grads[name]
            self.velocity[name] = v
            p = self.params[name]
            if self.weight_decay:
                p = (1.0 - self.weight_decay) * p
            if self.lr:
                p = p - self.lr * v
            self.params[name] = p


# ------------------------------------------------------------------
# Training loop
# ------------------------------------------------------------------


def hflip_sample(image: np.ndarray, boxes: Sequence[BBox]) -> Sample:
    width = image.shape[-1]
    flipped = [
        BBox(width - b.x - b.w, b.y, b.w, b.h, class_id=b.class_id) for b in boxes
    ]
    return np.ascontiguousarray(image[..., ::-1]), flipped


@dataclass
class TrainResult:
    model: DetectorModel
    trace: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=TRACE_COLUMNS))

    @property
    def steps(self) -> int:
        return len(self.trace)


def train(
    model: DetectorModel,
    dataset: Sequence[Sample],
    config: TrainConfig,
) -> TrainResult:
    """
    Train a copy of ``model`` and return it with the per-step loss trace.

    The batch gradient is the mean of per-image gradients. Every random
    draw (shuffle order, flips) comes from ``config.seed``.
    """
    if len(dataset) == 0:
        raise ConfigError("Training dataset is empty")

    model = model.copy()
    rng = np.random.default_rng(config.seed)
    optim = SGD(model.params, model.trainable(), config.lr,
                config.momentum, config.weight_decay)

    n = len(dataset)
    steps_per_epoch = int(np.ceil(n / config.batch_size))
    total_steps = steps_per_epoch * config.epochs
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)

    logger.info(
        "Training %d params over %d images: %d steps (batch %d, lr %.4g, beta %.3g)",
        len(optim.trainable), n, total_steps, config.batch_size, config.lr, config.beta,
    )

    rows: List[Dict[str, float]] = []
    step = 0
    bar = tqdm(total=total_steps, desc="train", disable=not config.progress, leave=False)
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            for batch in chunks(order, config.batch_size):
                if step >= total_steps:
                    break
                freq_active = config.use_freq_loss and step >= config.freq_warmup_steps
                row = _train_step(model, optim, dataset, batch, config, rng, freq_active, step)
                row.update(step=step, epoch=epoch, freq_active=float(freq_active))
                rows.append(row)
                step += 1
                bar.update(1)
                bar.set_postfix(loss=f"{row['total']:.4f}")
            if step >= total_steps:
                break
    finally:
        bar.close()

    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    if rows:
        logger.info("Training done: L_total %.5f → %.5f", rows[0]["total"], rows[-1]["total"])
    return TrainResult(model=model, trace=trace)


def _train_step(
    model: DetectorModel,
    optim: SGD,
    dataset: Sequence[Sample],
    batch: Sequence[int],
    config: TrainConfig,
    rng: np.random.Generator,
    freq_active: bool,
    step: int,
) -> Dict[str, float]:
    grads: Dict[str, np.ndarray] = {}
    sums: Dict[str, float] = {}
    for idx in batch:
        image, boxes = dataset[int(idx)]
        if config.hflip and rng.random() < 0.5:
            image, boxes = hflip_sample(image, boxes)
        try:
            result = loss_and_grads(
                model, image, boxes,
                beta=config.beta, lam=config.lam, roi_size=config.roi_size,
                use_freq=freq_active, match_iou=config.match_iou,
            )
        except NumericalError as exc:
            raise NumericalError(
                f"Non-finite gradient at step {step}: {exc}",
                step=step, breakdown=exc.breakdown, op_name=exc.op_name,
            ) from exc
        if not np.isfinite(result.total):
            logger.error("Non-finite loss at step %d: %s", step, result.breakdown)
            raise NumericalError(
                f"Non-finite loss at step {step}", step=step, breakdown=result.breakdown
            )
        for name in optim.trainable:
            g = result.grads[name]
            grads[name] = g if name not in grads else grads[name] + g
        for key, value in result.breakdown.items():
            sums[key] = sums.get(key, 0.0) + value

    scale = 1.0 / len(batch)
    optim.step({name: g * scale for name, g in grads.items()})
    return {key: value * scale for key, value in sums.items()}
