"""
reporting/tables.py

Ablation results shaped into the variant ladder table.
"""

import logging
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from freqpriv.detection.model import VARIANTS

logger = logging.getLogger(__name__)

ABLATION_METRICS = ["AP", "AP50", "AP75", "AP_S"]
ABLATION_COLUMNS = (
    ["variant", "seed", "fdaf", "gating", "freq_loss", "status"]
    + ABLATION_METRICS
    + ["beta_freq_total", "steps", "message"]
)
MEAN_SEED = "mean"


def _variant_flags(variant: str) -> Dict[str, bool]:
    fdaf, gating, freq_loss = VARIANTS[variant]
    return {"fdaf": fdaf, "gating": gating, "freq_loss": freq_loss}


def ablation_table(rows: Sequence[Dict], variants: Sequence[str] = tuple(VARIANTS)) -> pd.DataFrame:
    """
    Per-(variant, seed) rows followed by one mean row per variant.

    Means are taken over the cells with status ``ok``; a variant whose cells
    all failed gets a ``failed`` mean row with missing metrics. Missing
    metrics stay NaN in the frame.
    """
    cells = pd.DataFrame(list(rows))
    if cells.empty:
        raise ValueError("No ablation cells to tabulate. Run at least one (variant, seed) cell.")

    for col in ABLATION_COLUMNS:
        if col not in cells.columns:
            cells[col] = np.nan
    for key in ("fdaf", "gating", "freq_loss"):
        cells[key] = cells["variant"].map(lambda v, k=key: _variant_flags(v)[k])

    order = {v: i for i, v in enumerate(variants)}
    cells = cells.assign(_order=cells["variant"].map(order))
    cells = cells.sort_values(["_order", "seed"], kind="mergesort").drop(columns="_order")

    means: List[Dict] = []
    for variant in variants:
        group = cells[cells["variant"] == variant]
        if group.empty:
            continue
        ok = group[group["status"] == "ok"]
        row: Dict = {"variant": variant, "seed": MEAN_SEED, **_variant_flags(variant)}
        row["status"] = "ok" if len(ok) else "failed"
        for metric in ABLATION_METRICS + ["beta_freq_total", "steps"]:
            values = pd.to_numeric(ok[metric], errors="coerce").dropna()
            row[metric] = float(values.mean()) if len(values) else np.nan
        row["message"] = f"{len(ok)}/{len(group)} seeds"
        means.append(row)

    table = pd.concat([cells.astype({"seed": object}), pd.DataFrame(means)], ignore_index=True)
    logger.info("Ablation table: %d cell rows, %d mean rows", len(cells), len(means))
    return table[ABLATION_COLUMNS]


def mean_rows(table: pd.DataFrame) -> pd.DataFrame:
    return table[table["seed"] == MEAN_SEED].reset_index(drop=True)
