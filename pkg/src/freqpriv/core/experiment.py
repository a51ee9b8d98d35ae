"""
Flat experiment configuration.

Resolution order: dataclass defaults, the ``experiment:`` section of the
project YAML configs, a user YAML file, then explicit overrides (CLI flags).
Unknown keys are rejected at every layer.
"""

import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from freqpriv.core.errors import ConfigError
from freqpriv.core.settings import settings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    variant: str = "IV"
    image_size: int = 64
    channels: int = 1
    num_classes: int = 8
    num_face_classes: Optional[int] = None
    class_law: str = "zipf"
    zipf_s: float = 1.0
    objects_mean: float = 3.0
    objects_max: int = 8
    small_fraction: float = 0.6
    contrast_min: float = 0.5
    contrast_max: float = 2.0
    train_images: int = 2000
    test_images: int = 500
    train_data: Optional[str] = None
    test_data: Optional[str] = None
    width: int = 16
    gate_init: float = 2.0
    beta: float = 0.05
    lam: float = 2.0
    roi_size: int = 16
    dft_backend: str = "reference"
    lr: float = 0.01
    momentum: float = 0.937
    weight_decay: float = 5e-4
    epochs: int = 10
    batch_size: int = 8
    max_steps: Optional[int] = None
    freq_warmup_steps: int = 0
    hflip: bool = False
    match_iou: float = 0.25
    score_threshold: float = 0.001
    nms_iou: float = 0.6

    def __post_init__(self):
        from freqpriv.detection.model import VARIANTS

        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {list(VARIANTS)}, got '{self.variant}'")
        if self.image_size % 4:
            raise ConfigError(f"image_size must be divisible by 4, got {self.image_size}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.dft_backend not in ("reference", "fast"):
            raise ConfigError(f"dft_backend must be 'reference' or 'fast', got '{self.dft_backend}'")

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def _check_keys(cls, values: Dict[str, Any], source: str) -> None:
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"Unknown config key(s) in {source}: {unknown}")

    @classmethod
    def resolve(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> "ExperimentConfig":
        values: Dict[str, Any] = {}

        defaults = settings.section("experiment")
        cls._check_keys(defaults, "config/experiment.yaml")
        values.update(defaults)

        if path is not None:
            path = Path(path)
            try:
                with path.open("r", encoding="utf-8") as f:
                    user = yaml.safe_load(f) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError(f"Cannot read experiment config {path}: {exc}") from exc
            if not isinstance(user, dict):
                raise ConfigError(f"Experiment config {path} must be a flat mapping")
            cls._check_keys(user, str(path))
            values.update(user)

        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        cls._check_keys(overrides, "overrides")
        values.update(overrides)

        try:
            config = cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        logger.info("Resolved experiment config: %s", config.to_dict())
        return config

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        self._check_keys(kwargs, "overrides")
        return replace(self, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    # ------------------------------------------------------------------
    # Views for the individual modules
    # ------------------------------------------------------------------

    def scene_config(self, seed: Optional[int] = None):
        from freqpriv.data.synth import SceneConfig

        base = SceneConfig.from_dict(settings.section("synth"))
        return replace(
            base,
            image_height=self.image_size,
            image_width=self.image_size,
            channels=self.channels,
            num_classes=self.num_classes,
            class_law=self.class_law,
            zipf_s=self.zipf_s,
            objects_mean=self.objects_mean,
            objects_max=self.objects_max,
            small_fraction=self.small_fraction,
            contrast_range=(self.contrast_min, self.contrast_max),
            num_face_classes=self.num_face_classes,
            seed=self.seed if seed is None else seed,
        )

    def hparams(self):
        from freqpriv.detection.model import DetectorHParams

        return DetectorHParams.for_variant(
            self.variant,
            in_channels=self.channels,
            width=self.width,
            num_classes=self.num_classes,
            image_height=self.image_size,
            image_width=self.image_size,
            gate_init=self.gate_init,
            beta=self.beta,
            lam=self.lam,
            roi_size=self.roi_size,
            dft_backend=self.dft_backend,
        )

    def train_config(self, progress: bool = True):
        from freqpriv.detection.model import VARIANTS
        from freqpriv.detection.train import TrainConfig

        return TrainConfig(
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            beta=self.beta,
            lam=self.lam,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            roi_size=self.roi_size,
            freq_warmup_steps=self.freq_warmup_steps,
            use_freq_loss=VARIANTS[self.variant][2],
            hflip=self.hflip,
            match_iou=self.match_iou,
            max_steps=self.max_steps,
            progress=progress,
        )
