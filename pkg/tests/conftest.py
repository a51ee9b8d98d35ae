from pathlib import Path

import numpy as np
import pytest

from freqpriv.detection.model import DetectorHParams, DetectorModel

FIXTURES = Path(__file__).parent / "fixtures"


# ---------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------

@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def stats_fixture() -> Path:
    return FIXTURES / "stats_fixture"


@pytest.fixture
def small_hparams() -> DetectorHParams:
    """32×32 grayscale input, C=4, K=3."""
    return DetectorHParams.for_variant(
        "IV", in_channels=1, width=4, num_classes=3,
        image_height=32, image_width=32, roi_size=4,
    )


@pytest.fixture
def small_model(small_hparams) -> DetectorModel:
    return DetectorModel.create(small_hparams, seed=0)
