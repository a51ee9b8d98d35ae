import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from freqpriv.data.imageio import RASTER_SUFFIXES, read_raster, write_raster  # noqa: E402

logger = logging.getLogger(__name__)


class DataHandler:
    """
    DataHandler manages file I/O for runs, datasets and reports.

    Supported:
    - Tabular data (csv) via pandas
    - JSON documents (json) and JSON lines (jsonl)
    - 8-bit rasters (pgm, ppm)
    - Figure saving

    The file type comes from the suffix unless ``file_type`` is given.
    """

    def __init__(
        self,
        filepath: Union[str, Path],
        file_type: Optional[str] = None,
        **kwargs
    ):
        """
        Args:
            filepath: Full path to file
            file_type: Optional override of file type
            **kwargs: Passed to pandas / json I/O
        """
        self.filepath = Path(filepath)
        self.file_type = file_type.lower() if file_type else self.filepath.suffix.replace(".", "").lower()
        self.kwargs = kwargs

    # ------------------------------------------------------------------
    # Load
    # ------------------------------------------------------------------

    def load(self) -> Any:
        """
        Load data from disk.

        Returns:
            DataFrame (csv), dict/list (json), list of dicts (jsonl) or
            uint8 ndarray (pgm/ppm)
        """
        try:
            if self.file_type == "csv":
                return pd.read_csv(self.filepath, **self.kwargs)

            if self.file_type == "json":
                with self.filepath.open("r", encoding="utf-8") as f:
                    return json.load(f)

            if self.file_type == "jsonl":
                with self.filepath.open("r", encoding="utf-8") as f:
                    return [json.loads(line) for line in f if line.strip()]

            if f".{self.file_type}" in RASTER_SUFFIXES:
                return read_raster(self.filepath)

            raise ValueError(f"Unsupported load type: {self.file_type}")

        except Exception as e:
            logger.error("Failed to load file at %s: %s", self.filepath, e)
            raise

    # ------------------------------------------------------------------
    # Save
    # ------------------------------------------------------------------

    def save(self, obj: Any) -> Path:
        """
        Save a DataFrame, JSON-able object, record list or raster.

        JSON is written with sorted keys so identical content gives identical
        bytes.
        """
        self.filepath.parent.mkdir(parents=True, exist_ok=True)

        try:
            if self.file_type == "csv":
                obj.to_csv(self.filepath, index=self.kwargs.get("index", False),
                           float_format=self.kwargs.get("float_format", "%.10g"))

            elif self.file_type == "json":
                text = json.dumps(obj, indent=self.kwargs.get("indent", 2), sort_keys=True)
                self.filepath.write_text(text + "\n", encoding="utf-8")

            elif self.file_type == "jsonl":
                with self.filepath.open("w", encoding="utf-8") as f:
                    for record in obj:
                        f.write(json.dumps(record, sort_keys=True) + "\n")

            elif f".{self.file_type}" in RASTER_SUFFIXES:
                write_raster(self.filepath, obj)

            else:
                raise ValueError(f"Unsupported save type: {self.file_type}")

            logger.debug("File saved to %s", self.filepath)
            return self.filepath

        except Exception as e:
            logger.error("Failed to save file at %s: %s", self.filepath, e)
            raise

    # ------------------------------------------------------------------
    # Figure Saving
    # ------------------------------------------------------------------

    @staticmethod
    def save_plot(
        path: Union[str, Path],
        fig: Optional[plt.Figure] = None,
        **kwargs
    ) -> Path:
        """Save a matplotlib figure (or the current one) and close it."""
        save_path = Path(path)
        save_path.parent.mkdir(parents=True, exist_ok=True)
        fig = fig or plt.gcf()
        try:
            fig.savefig(save_path, bbox_inches="tight", **kwargs)
            logger.info("Plot saved to: %s", save_path)
            return save_path
        except Exception as e:
            logger.error("Failed to save plot %s: %s", save_path, e)
            raise
        finally:
            plt.close(fig)
