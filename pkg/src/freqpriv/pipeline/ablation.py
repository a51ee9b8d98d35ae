"""
Variant ladder I–IV over several seeds.

Each (variant, seed) cell trains and evaluates in its own directory
``cells/<variant>_seed<seed>``; cells run in parallel up to FREQPRIV_THREADS.
Datasets are generated once per seed and shared by the four variants.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from freqpriv.core.experiment import ExperimentConfig
from freqpriv.core.settings import settings
from freqpriv.data.handler import DataHandler
from freqpriv.data.synth import SynthDataset
from freqpriv.detection.model import VARIANTS
from freqpriv.pipeline.experiment import (
    PathLike,
    evaluate_model,
    register_run,
    resolve_split,
    run_train,
    seeds_from,
)
from freqpriv.reporting.tables import ABLATION_METRICS, ablation_table, mean_rows

logger = logging.getLogger(__name__)


def cell_name(variant: str, seed: int) -> str:
    return f"{variant}_seed{seed}"


def run_cell(
    config: ExperimentConfig,
    variant: str,
    seed: int,
    train_set: SynthDataset,
    test_set: SynthDataset,
    out_dir: Path,
) -> Dict:
    """Train + evaluate one cell; a failure is reported in the row, never raised."""
    row: Dict = {"variant": variant, "seed": seed, "status": "ok", "message": ""}
    try:
        cfg = config.with_overrides(
            variant=variant, seed=seed,
            train_data=str(train_set.root), test_data=str(test_set.root),
        )
        result = run_train(cfg, out_dir, progress=False, n_jobs=1, dataset=train_set)
        evaluation, _ = evaluate_model(result.model, test_set, cfg.score_threshold, cfg.nms_iou, n_jobs=1)
        evaluation.write(out_dir / "eval")

        metrics = evaluation.to_dict()
        row.update({m: metrics[m] for m in ABLATION_METRICS})
        row["beta_freq_total"] = float(result.trace["beta_freq"].sum()) if result.steps else 0.0
        row["steps"] = result.steps
        logger.info("Ablation cell %s done: AP50=%s", cell_name(variant, seed), metrics["AP50"])
    except Exception as exc:
        logger.warning("Ablation cell %s failed: %s", cell_name(variant, seed), exc)
        row.update(status="failed", message=f"{type(exc).__name__}: {exc}")
    return row


def _datasets_per_seed(
    config: ExperimentConfig,
    seeds: Sequence[int],
    out_dir: Path,
    progress: bool,
) -> Dict[int, Tuple[SynthDataset, SynthDataset]]:
    datasets = {}
    for seed in seeds:
        cfg = config.with_overrides(seed=seed)
        seed_dir = out_dir / f"seed{seed}"
        datasets[seed] = (
            resolve_split(cfg, "train", seed_dir, progress=progress),
            resolve_split(cfg, "test", seed_dir, progress=progress),
        )
    return datasets


def _json_safe(value):
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return None
    return value


def run_ablation(
    config: ExperimentConfig,
    out_dir: PathLike,
    seeds: Optional[Sequence[int]] = None,
    variants: Optional[Sequence[str]] = None,
    n_jobs: Optional[int] = None,
    figures: bool = False,
    progress: bool = True,
) -> pd.DataFrame:
    """
    Train and evaluate every variant for every seed.

    Writes ``ablation.csv`` (per-seed rows + per-variant means) and returns
    the same table.
    """
    out_dir = Path(out_dir)
    ablation_cfg = settings.section("ablation")
    seeds = seeds_from(seeds, ablation_cfg.get("seeds", [config.seed]))
    variants = list(variants or ablation_cfg.get("variants", list(VARIANTS)))
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"Unknown variant(s) {unknown}, expected a subset of {list(VARIANTS)}")

    datasets = _datasets_per_seed(config, seeds, out_dir / "data", progress)
    cells = [(v, s) for s in seeds for v in variants]
    n_jobs = min(n_jobs or settings.threads, len(cells))
    logger.info("Ablation: %d variants × %d seeds on %d worker(s)", len(variants), len(seeds), n_jobs)

    rows: List[Dict] = Parallel(n_jobs=n_jobs)(
        delayed(run_cell)(config, v, s, *datasets[s], out_dir / "cells" / cell_name(v, s))
        for v, s in tqdm(cells, desc="ablate", disable=not progress, leave=False)
    )
    failed = [cell_name(r["variant"], r["seed"]) for r in rows if r["status"] != "ok"]
    if failed:
        logger.warning("%d ablation cell(s) failed: %s", len(failed), ", ".join(failed))

    table = ablation_table(rows, variants)
    DataHandler(out_dir / "ablation.csv").save(table)
    if figures:
        from freqpriv.reporting.figures import save_ablation_figure

        save_ablation_figure(table, out_dir / "figures" / "ablation.png")

    summary = {
        f"{r.variant}_{m}": _json_safe(getattr(r, m))
        for r in mean_rows(table).itertuples(index=False)
        for m in ABLATION_METRICS
    }
    summary["failed_cells"] = failed
    register_run(out_dir, {**config.to_dict(), "seeds": seeds, "variants": variants}, summary)
    return table
