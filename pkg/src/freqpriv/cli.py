"""
freqpriv command line.

    freqpriv gradcheck                      verify every VJP and the full loss
    freqpriv synth   --config --seed --out  generate train/test splits
    freqpriv stats   ANNOTATIONS --out      dataset statistics report
    freqpriv train   --config --seed --variant --out
    freqpriv eval    --model | --predictions  [--data] --out
    freqpriv ablate  --config --seeds ... --out

Exit codes: 0 ok, 1 usage, 2 invalid config/data/checkpoint, 3 numerical
failure (including a failed gradcheck).
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, NoReturn, Optional, Sequence

from freqpriv import __version__
from freqpriv.core.errors import FreqPrivError, NumericalError
from freqpriv.core.experiment import ExperimentConfig
from freqpriv.core.settings import settings
from freqpriv.detection.model import VARIANTS
from freqpriv.utils.logger import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_out(command: str) -> Path:
    return settings.paths.RUNS["runs_dir"] / command


def _add_common(parser: argparse.ArgumentParser, variant: bool = False) -> None:
    parser.add_argument("--config", type=Path, help="flat YAML experiment file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out", type=Path, help="output directory")
    if variant:
        parser.add_argument("--variant", choices=list(VARIANTS), help="ablation variant")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="freqpriv", description="Frequency-enhanced privacy-object detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-file", type=Path, help="also log to this file")
    parser.add_argument("--no-progress", action="store_true", help="hide progress bars")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gradcheck", help="finite-difference check of every VJP")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out", type=Path, help="write the report as gradcheck.csv here")

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    _add_common(p)

    p = sub.add_parser("stats", help="statistics of a COCO-style annotation file")
    p.add_argument("annotations", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--face-ids", type=int, nargs="*",
                   help="face category ids (default: categories named *face*)")
    p.add_argument("--no-contrast", action="store_true", help="skip raster-based contrast")
    p.add_argument("--figures", action="store_true")

    p = sub.add_parser("train", help="train one variant")
    _add_common(p, variant=True)
    p.add_argument("--data", type=Path, help="training dataset directory (default: generated)")

    p = sub.add_parser("eval", help="evaluate a checkpoint or a predictions file")
    _add_common(p, variant=True)
    p.add_argument("--model", type=Path, help="checkpoint (.fprv)")
    p.add_argument("--predictions", type=Path, help="JSON-lines predictions")
    p.add_argument("--data", type=Path, help="dataset directory with annotations.json")

    p = sub.add_parser("ablate", help="variant ladder I-IV over seeds")
    _add_common(p)
    p.add_argument("--seeds", type=int, nargs="+", help="seeds (default: config/experiment.yaml)")
    p.add_argument("--variants", nargs="+", choices=list(VARIANTS))
    p.add_argument("--figures", action="store_true")
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {"seed": getattr(args, "seed", None), "variant": getattr(args, "variant", None)}
    if args.command == "train" and args.data is not None:
        overrides["train_data"] = str(args.data)
    return ExperimentConfig.resolve(getattr(args, "config", None), overrides)


def _print_json(data: Dict) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


# ------------------------------------------------------------------
# Subcommands
# ------------------------------------------------------------------


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from freqpriv.data.handler import DataHandler
    from freqpriv.pipeline.gradcheck_suite import run_gradcheck_suite

    report = run_gradcheck_suite(tolerance=args.tolerance, seed=args.seed)
    print(report.to_string(index=False))
    if args.out is not None:
        DataHandler(args.out / "gradcheck.csv").save(report)
    failed = report[~report["passed"]]
    if len(failed):
        print(f"FAILED: {', '.join(failed['check'] + ':' + failed['target'])}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    from freqpriv.pipeline.experiment import run_synth

    config = _resolve_config(args)
    datasets = run_synth(config, args.out or _default_out("synth"), progress=not args.no_progress)
    _print_json({split: ds.manifest["tallies"] for split, ds in datasets.items()})
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    from freqpriv.pipeline.experiment import run_stats

    report = run_stats(
        args.annotations, args.out or _default_out("stats"),
        face_category_ids=args.face_ids, with_contrast=not args.no_contrast,
        figures=args.figures,
    )
    _print_json(report.summary())
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from freqpriv.pipeline.experiment import run_train, trace_metrics

    config = _resolve_config(args)
    result = run_train(config, args.out or _default_out("train"), progress=not args.no_progress)
    _print_json(trace_metrics(result))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from freqpriv.pipeline.experiment import run_eval

    if args.model is None and args.predictions is None:
        print("freqpriv eval: one of --model or --predictions is required", file=sys.stderr)
        return EXIT_USAGE
    config = _resolve_config(args)
    result = run_eval(
        config, args.out or _default_out("eval"),
        model_path=args.model, data=args.data, predictions=args.predictions,
        progress=not args.no_progress,
    )
    _print_json(result.to_dict())
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    from freqpriv.pipeline.ablation import run_ablation

    config = _resolve_config(args)
    table = run_ablation(
        config, args.out or _default_out("ablate"),
        seeds=args.seeds, variants=args.variants,
        figures=args.figures, progress=not args.no_progress,
    )
    print(table.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    setup_logging(args.log_level, args.log_file)

    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        logger.error("Numerical failure: %s", exc)
        if exc.step is not None:
            logger.error("At step %d, loss terms: %s", exc.step, exc.breakdown)
        return exc.exit_code
    except FreqPrivError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_VALIDATION


def run(argv: Optional[List[str]] = None) -> None:
    sys.exit(main(argv))


if __name__ == "__main__":
    run()
