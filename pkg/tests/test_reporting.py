import numpy as np
import pytest

from freqpriv.reporting.figures import save_ablation_figure, save_stats_figures
from freqpriv.reporting.tables import ABLATION_COLUMNS, MEAN_SEED, ablation_table, mean_rows
from freqpriv.stats.annotations import load_annotations
from freqpriv.stats.report import compute_report


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------

def ok_row(variant, seed, ap):
    return {"variant": variant, "seed": seed, "status": "ok", "message": "",
            "AP": ap, "AP50": 2 * ap, "AP75": ap / 2, "AP_S": ap, "beta_freq_total": 0.0, "steps": 4}


def failed_row(variant, seed):
    return {"variant": variant, "seed": seed, "status": "failed", "message": "NumericalError: boom"}


@pytest.fixture
def rows():
    return [
        ok_row("II", 1, 0.3),
        ok_row("I", 1, 0.2),
        ok_row("I", 0, 0.1),
        ok_row("II", 0, 0.5),
        failed_row("III", 0),
        failed_row("III", 1),
    ]


# ---------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------

def test_cells_ordered_by_variant_then_seed(rows):
    table = ablation_table(rows, ["I", "II", "III"])
    cells = table[table["seed"] != MEAN_SEED]

    assert list(table.columns) == ABLATION_COLUMNS
    assert list(zip(cells["variant"], cells["seed"])) == [
        ("I", 0), ("I", 1), ("II", 0), ("II", 1), ("III", 0), ("III", 1),
    ]


def test_means_over_ok_cells(rows):
    means = mean_rows(ablation_table(rows, ["I", "II", "III"])).set_index("variant")

    assert means.loc["I", "AP"] == pytest.approx(0.15)
    assert means.loc["II", "AP50"] == pytest.approx(0.8)
    assert means.loc["I", "message"] == "2/2 seeds"
    assert bool(means.loc["II", "fdaf"]) and not bool(means.loc["II", "gating"])


def test_failed_cells_are_excluded_from_means():
    rows = [ok_row("IV", 0, 0.4), failed_row("IV", 1)]

    means = mean_rows(ablation_table(rows, ["IV"]))

    assert means.loc[0, "AP"] == pytest.approx(0.4)
    assert means.loc[0, "message"] == "1/2 seeds"
    assert means.loc[0, "status"] == "ok"


def test_variant_with_only_failures(rows):
    means = mean_rows(ablation_table(rows, ["I", "II", "III"])).set_index("variant")

    assert means.loc["III", "status"] == "failed"
    assert np.isnan(means.loc["III", "AP"])
    assert means.loc["III", "message"] == "0/2 seeds"


def test_empty_ablation_rejected():
    with pytest.raises(ValueError):
        ablation_table([])


# ---------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------

def test_ablation_figure_written(tmp_path, rows):
    path = save_ablation_figure(ablation_table(rows, ["I", "II", "III"]), tmp_path / "fig" / "ablation.png")

    assert path.exists()
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_stats_figures_written(tmp_path, stats_fixture):
    report = compute_report(load_annotations(stats_fixture / "annotations.json"))

    paths = save_stats_figures(report, tmp_path)

    assert sorted(p.name for p in paths) == [
        "class_frequency.png", "class_scale_spread.png", "face_density.png", "object_stats.png",
    ]
    assert all(p.stat().st_size > 0 for p in paths)
