"""
Run functions behind the CLI subcommands.

Every run writes into one output directory registered through RunRegistry,
so the directory always holds config.json (seed included), metrics.json and
hashes.json next to the run's own artifacts.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from freqpriv.core.experiment import ExperimentConfig
from freqpriv.data.handler import DataHandler
from freqpriv.data.imageio import read_raster, to_chw
from freqpriv.data.synth import SynthDataset, generate_dataset, load_dataset
from freqpriv.detection.checkpoint import load_checkpoint
from freqpriv.detection.model import DetectorModel
from freqpriv.detection.train import TrainResult, train
from freqpriv.evaluation.evaluate import (
    EvalResult,
    evaluate,
    gts_from_annotations,
    load_predictions,
    predict,
    save_predictions,
)
from freqpriv.frequency.gating import gate_band_profile
from freqpriv.pipeline.registry import RunRegistry
from freqpriv.stats.annotations import AnnotationSet, load_annotations
from freqpriv.stats.report import StatsReport, compute_report
from freqpriv.utils.helpers import derive_rng

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# held-out images come from their own seed stream
TEST_STREAM = 1


def split_seed(seed: int, split: str) -> int:
    """Scene seed for a split: the run seed for train, a derived one for test."""
    if split == "train":
        return int(seed)
    if split == "test":
        return int(derive_rng(seed, TEST_STREAM).integers(0, 2 ** 31 - 1))
    raise ValueError(f"Unknown split '{split}', expected 'train' or 'test'")


def register_run(out_dir: Path, config: Dict[str, Any], metrics: Dict[str, Any],
              model: Optional[DetectorModel] = None, extra: Optional[Dict] = None) -> Path:
    registry = RunRegistry(out_dir.parent)
    return registry.register(out_dir.name, config, metrics=metrics, model=model, extra=extra)


# ------------------------------------------------------------------
# Data
# ------------------------------------------------------------------


def build_split(
    config: ExperimentConfig,
    split: str,
    out_dir: PathLike,
    n_jobs: Optional[int] = None,
    progress: bool = True,
) -> SynthDataset:
    n_images = config.train_images if split == "train" else config.test_images
    scene = config.scene_config(seed=split_seed(config.seed, split))
    return generate_dataset(scene, n_images, Path(out_dir), n_jobs=n_jobs, progress=progress)


def resolve_split(
    config: ExperimentConfig,
    split: str,
    out_dir: Path,
    n_jobs: Optional[int] = None,
    progress: bool = True,
) -> SynthDataset:
    """Dataset from ``train_data``/``test_data`` when set, otherwise generated under ``out_dir/data``."""
    path = config.train_data if split == "train" else config.test_data
    if path:
        logger.info("Using %s data from %s", split, path)
        return load_dataset(path)
    return build_split(config, split, out_dir / "data" / split, n_jobs=n_jobs, progress=progress)


def run_synth(
    config: ExperimentConfig,
    out_dir: PathLike,
    n_jobs: Optional[int] = None,
    progress: bool = True,
) -> Dict[str, SynthDataset]:
    out_dir = Path(out_dir)
    datasets = {
        split: build_split(config, split, out_dir / split, n_jobs=n_jobs, progress=progress)
        for split in ("train", "test")
    }
    metrics = {
        f"{split}_{key}": ds.manifest["tallies"][key]
        for split, ds in datasets.items()
        for key in ("n_objects", "skipped_objects", "small_object_fraction")
    }
    metrics.update({f"{split}_sha256": ds.manifest["sha256"] for split, ds in datasets.items()})
    register_run(out_dir, config.to_dict(), metrics)
    return datasets


# ------------------------------------------------------------------
# Statistics
# ------------------------------------------------------------------


def run_stats(
    annotations: PathLike,
    out_dir: PathLike,
    face_category_ids: Optional[Iterable[int]] = None,
    with_contrast: bool = True,
    figures: bool = False,
    config: Optional[ExperimentConfig] = None,
) -> StatsReport:
    out_dir = Path(out_dir)
    ann_set: AnnotationSet = load_annotations(annotations)
    report = compute_report(ann_set, face_category_ids, with_contrast=with_contrast)
    report.write(out_dir)
    if ann_set.violations:
        DataHandler(out_dir / "violations.json").save(ann_set.violations)
    if figures:
        from freqpriv.reporting.figures import save_stats_figures

        save_stats_figures(report, out_dir / "figures")

    run_config = {
        "annotations": str(annotations),
        "face_category_ids": None if face_category_ids is None else sorted(int(i) for i in face_category_ids),
        "with_contrast": with_contrast,
        "seed": None if config is None else config.seed,
    }
    register_run(out_dir, run_config, report.summary())
    return report


# ------------------------------------------------------------------
# Training
# ------------------------------------------------------------------


def trace_metrics(result: TrainResult) -> Dict[str, Any]:
    trace = result.trace
    if trace.empty:
        return {"steps": 0}
    last = trace.iloc[-1]
    return {
        "steps": int(result.steps),
        "first_total": float(trace["total"].iloc[0]),
        "final_total": float(last["total"]),
        "final_det": float(last["det"]),
        "final_freq": float(last["freq"]),
        "beta_freq_total": float(trace["beta_freq"].sum()),
    }


def run_train(
    config: ExperimentConfig,
    out_dir: PathLike,
    progress: bool = True,
    n_jobs: Optional[int] = None,
    dataset: Optional[SynthDataset] = None,
) -> TrainResult:
    """Train the configured variant; writes model.fprv, trace.csv and gate_profile.csv."""
    out_dir = Path(out_dir)
    if dataset is None:
        dataset = resolve_split(config, "train", out_dir, n_jobs=n_jobs, progress=progress)
    model = DetectorModel.create(config.hparams(), seed=config.seed)

    result = train(model, dataset.samples(), config.train_config(progress=progress))
    DataHandler(out_dir / "trace.csv").save(result.trace)

    block = result.model.fdaf_block()
    if block is not None:
        DataHandler(out_dir / "gate_profile.csv").save(gate_band_profile(block.gate))

    register_run(
        out_dir, config.to_dict(), trace_metrics(result), model=result.model,
        extra={"variant": config.variant, "seed": config.seed},
    )
    logger.info("Variant %s (seed %d) trained: %s", config.variant, config.seed, out_dir)
    return result


# ------------------------------------------------------------------
# Evaluation
# ------------------------------------------------------------------


def dataset_images(dataset: SynthDataset) -> List[Tuple[int, np.ndarray]]:
    ann = dataset.annotations
    return [
        (int(image_id), to_chw(read_raster(ann.image_path(int(image_id)))))
        for image_id in ann.images["id"]
    ]


def evaluate_model(
    model: DetectorModel,
    dataset: SynthDataset,
    score_threshold: float,
    nms_iou: float,
    n_jobs: Optional[int] = None,
) -> Tuple[EvalResult, pd.DataFrame]:
    preds = predict(model, dataset_images(dataset), score_threshold=score_threshold,
                    nms_iou=nms_iou, n_jobs=n_jobs)
    return evaluate(preds, gts_from_annotations(dataset.annotations)), preds


def run_eval(
    config: ExperimentConfig,
    out_dir: PathLike,
    model_path: Optional[PathLike] = None,
    data: Optional[PathLike] = None,
    predictions: Optional[PathLike] = None,
    n_jobs: Optional[int] = None,
    progress: bool = True,
) -> EvalResult:
    """
    Evaluate a checkpoint (or a predictions file) against a dataset.

    ``data`` is a dataset directory holding annotations.json; without it the
    configured test split is used.
    """
    if model_path is None and predictions is None:
        raise ValueError("run_eval needs a model checkpoint or a predictions file")
    out_dir = Path(out_dir)
    if data is not None:
        dataset = load_dataset(data)
    else:
        dataset = resolve_split(config, "test", out_dir, n_jobs=n_jobs, progress=progress)

    gts = gts_from_annotations(dataset.annotations)
    if predictions is not None:
        result = evaluate(load_predictions(predictions), gts)
    else:
        model = load_checkpoint(model_path)
        result, preds = evaluate_model(model, dataset, config.score_threshold,
                                       config.nms_iou, n_jobs=n_jobs)
        save_predictions(preds, out_dir / "predictions.jsonl")
    result.write(out_dir)

    run_config = {
        **config.to_dict(),
        "model": None if model_path is None else str(model_path),
        "predictions": None if predictions is None else str(predictions),
        "data": str(dataset.root),
    }
    register_run(out_dir, run_config, result.to_dict())
    return result


def seeds_from(values: Optional[Sequence[int]], default: Sequence[int]) -> List[int]:
    seeds = list(default if not values else values)
    if not seeds:
        raise ValueError("At least one seed is required")
    return [int(s) for s in seeds]
