"""
Inspect a trained checkpoint: metadata, spectral gate profile and the
detections it produces on a few test images.

Usage: python scripts/inspect_checkpoint.py runs/train/model.fprv [dataset_dir] [n_images]
"""

import sys

import pandas as pd

from freqpriv.core.settings import settings
from freqpriv.data.synth import load_dataset
from freqpriv.detection.checkpoint import load_checkpoint, read_metadata
from freqpriv.frequency.gating import gate_band_profile
from freqpriv.evaluation.evaluate import predict
from freqpriv.pipeline.experiment import dataset_images
from freqpriv.utils.logger import setup_logging


def main():
    setup_logging("WARNING")
    if len(sys.argv) < 2:
        print(__doc__)
        return 1

    # --------------------------------------------------
    # 1. Load checkpoint
    # --------------------------------------------------
    model_path = sys.argv[1]
    model = load_checkpoint(model_path)
    meta = read_metadata(model_path)

    print("Checkpoint ✔")
    print("Variant:", meta.get("extra", {}).get("variant"), "Seed:", meta.get("extra", {}).get("seed"))
    for name, dims in meta["groups"].items():
        frozen = " (frozen)" if name in model.frozen else ""
        print(f"  {name:<24} {dims}{frozen}")

    # --------------------------------------------------
    # 2. Spectral gate, if present
    # --------------------------------------------------
    block = model.fdaf_block()
    if block is not None:
        profile = gate_band_profile(block.gate)
        summary = profile.groupby("band")["mean_activation"].mean()
        print("\nMean gate activation per radial band:")
        print(summary.to_string())
    else:
        print("\nNo FDAF block (variant I)")

    # --------------------------------------------------
    # 3. Detections on the first test images
    # --------------------------------------------------
    data_dir = sys.argv[2] if len(sys.argv) > 2 else settings.paths.DATA["synth_dir"] / "test"
    n_images = int(sys.argv[3]) if len(sys.argv) > 3 else 3
    dataset = load_dataset(data_dir)
    images = dataset_images(dataset)[:n_images]
    preds = predict(model, images, score_threshold=0.05)

    names = dataset.annotations.category_names()
    preds = preds.assign(name=preds["category_id"].map(names))
    with pd.option_context("display.max_rows", 50, "display.width", 120):
        print(f"\nDetections (score > 0.05) on {len(images)} image(s):")
        print(preds.sort_values(["image_id", "score"], ascending=[True, False]).to_string(index=False))
    return 0


if __name__ == "__main__":
    sys.exit(main())
