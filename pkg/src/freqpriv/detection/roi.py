"""Box-region crops of the neck feature, resampled to S×S."""

import logging
from typing import Optional, Tuple

from freqpriv.detection.boxes import BBox
from freqpriv.detection.model import STRIDE
from freqpriv.tensor.ops import BILINEAR_RESIZE
from freqpriv.tensor.tape import Tape, Var
from freqpriv.tensor.types import ArrayLike, FeatureMap, as_array

logger = logging.getLogger(__name__)

Window = Tuple[float, float, float, float]


def roi_window(
    box: BBox,
    feature_hw: Tuple[int, int],
    stride: int = STRIDE,
) -> Optional[Window]:
    """
    (y0, x0, height, width) of the box in feature-cell units, clipped to the
    grid. None when the clipped window has no area.
    """
    fh, fw = feature_hw
    x0 = max(box.x / stride, 0.0)
    y0 = max(box.y / stride, 0.0)
    x1 = min((box.x + box.w) / stride, float(fw))
    y1 = min((box.y + box.h) / stride, float(fh))
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return y0, x0, y1 - y0, x1 - x0


def roi_crop(
    feature: ArrayLike,
    box: BBox,
    size: int,
    stride: int = STRIDE,
) -> Optional[FeatureMap]:
    """C×S×S bilinear crop under ``box``; None (with a warning) if it collapses."""
    values = as_array(feature)
    window = roi_window(box, values.shape[-2:], stride)
    if window is None:
        logger.warning("ROI box %s collapses to zero cells; skipped", box.to_list())
        return None
    return FeatureMap(BILINEAR_RESIZE(values, out_h=size, out_w=size, window=window))


def roi_crop_graph(
    tape: Tape,
    feature: Var,
    box: BBox,
    size: int,
    stride: int = STRIDE,
) -> Optional[Var]:
    """Record a crop on ``tape``; the box location itself is not differentiated."""
    window = roi_window(box, feature.shape[-2:], stride)
    if window is None:
        logger.warning("ROI box %s collapses to zero cells; skipped", box.to_list())
        return None
    return tape.apply(BILINEAR_RESIZE, feature, out_h=size, out_w=size, window=window)

