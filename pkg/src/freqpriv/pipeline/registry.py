import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from freqpriv.detection.checkpoint import save_checkpoint
from freqpriv.detection.model import DetectorModel
from freqpriv.utils.helpers import sha256_file

logger = logging.getLogger(__name__)


class RunRegistry:
    """
    Output-directory bookkeeping for CLI runs.

    Every registered run directory holds:
    - config.json   fully resolved configuration (seed included)
    - metrics.json  run metrics
    - hashes.json   sha256 per emitted file
    - model.fprv    when a model is registered
    """

    def __init__(self, base_dir="runs"):
        self.base_dir = Path(base_dir)
        self.base_dir.mkdir(exist_ok=True, parents=True)

    def run_dir(self, name: str) -> Path:
        path = self.base_dir / name
        path.mkdir(exist_ok=True, parents=True)
        return path

    def register(
        self,
        name: str,
        config: Dict[str, Any],
        metrics: Optional[Dict[str, Any]] = None,
        model: Optional[DetectorModel] = None,
        extra: Optional[Dict[str, Any]] = None,
    ) -> Path:
        run_path = self.run_dir(name)

        if model is not None:
            save_checkpoint(model, run_path / "model.fprv", extra=extra)

        (run_path / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
        (run_path / "metrics.json").write_text(json.dumps(metrics or {}, indent=2, sort_keys=True) + "\n")
        hashes = self.write_hashes(run_path)

        logger.info("Registered run %s (%d files)", run_path, len(hashes))
        return run_path

    @staticmethod
    def write_hashes(run_path: Path) -> Dict[str, str]:
        """sha256 of every file under ``run_path`` except hashes.json itself."""
        hashes = {
            str(p.relative_to(run_path)): sha256_file(p)
            for p in sorted(run_path.rglob("*"))
            if p.is_file() and p.name != "hashes.json"
        }
        (run_path / "hashes.json").write_text(json.dumps(hashes, indent=2, sort_keys=True) + "\n")
        return hashes
