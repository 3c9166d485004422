import argparse
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence

from app.artifact_ops import write_json
from app.env import GCSF_JOBS, GCSF_OUT_DIR, GCSF_TOL_SCALE
from app.experiment_config import ExperimentConfig, builtin_names, load_config
from app.experiment_constants import (
    BUILTIN_EXPERIMENTS,
    EXIT_CHECK_FAILED,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    SUMMARY_FILE_NAME,
)
from app.experiment_runners import run_experiment
from app.lab_errors import ConfigValidationError, DomainError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcsf-lab",
        description="Numerical experiments for graphical curve shortening flow",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run configs or built-in experiments")
    run.add_argument("configs", nargs="*", help="Config paths or built-in names")
    run.add_argument("--all", action="store_true", help="Run every built-in")
    run.add_argument("--jobs", type=int, default=GCSF_JOBS)
    run.add_argument("--out", type=Path, default=Path(GCSF_OUT_DIR))
    run.add_argument("--tol-scale", type=float, default=GCSF_TOL_SCALE)

    sub.add_parser("list", help="List the built-in acceptance experiments")

    validate = sub.add_parser("validate", help="Parse and validate configs")
    validate.add_argument("configs", nargs="*", help="Config paths or built-in names")
    return parser


def list_experiments() -> List[str]:
    return [f"{name}: {text}" for name, text in BUILTIN_EXPERIMENTS.items()]


def _load_all(refs: Sequence[str]) -> List[ExperimentConfig]:
    return [load_config(ref) for ref in refs]


def validate_command(refs: Sequence[str]) -> int:
    refs = list(refs) or builtin_names()
    try:
        configs = _load_all(refs)
    except (ConfigValidationError, DomainError) as e:
        logger.error(f"Invalid config: {e}")
        return EXIT_CONFIG_ERROR
    for config in configs:
        print(f"{config.name}: ok ({config.kind})")
    return EXIT_OK


def run_command(
    refs: Sequence[str],
    out_dir: Path,
    *,
    jobs: int = GCSF_JOBS,
    tol_scale: float = GCSF_TOL_SCALE,
) -> int:
    if jobs < 1 or not tol_scale > 0:
        logger.error(f"--jobs must be >= 1 and --tol-scale > 0 ({jobs}, {tol_scale})")
        return EXIT_CONFIG_ERROR
    try:
        configs = _load_all(refs)
    except (ConfigValidationError, DomainError) as e:
        logger.error(f"Invalid config: {e}")
        return EXIT_CONFIG_ERROR
    if not configs:
        logger.error("Nothing to run; name a config or pass --all")
        return EXIT_CONFIG_ERROR

    out_dir = Path(out_dir)
    outcomes = []
    for config in configs:
        try:
            outcome = run_experiment(
                config,
                out_dir / config.name,
                jobs=jobs,
                tol_scale=tol_scale,
                logger=logger,
            )
        except ConfigValidationError as e:
            logger.error(f"Invalid config {config.name}: {e}")
            return EXIT_CONFIG_ERROR
        except Exception as e:
            logger.exception(f"Experiment {config.name} failed: {e}")
            raise
        outcomes.append(outcome)
        print(f"{config.name}: {'pass' if outcome.passed else 'FAIL'}")

    passed = all(o.passed for o in outcomes)
    write_json(
        out_dir / SUMMARY_FILE_NAME,
        {
            "passed": passed,
            "jobs": jobs,
            "tol_scale": tol_scale,
            "experiments": [o.to_dict() for o in outcomes],
        },
    )
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on bad usage, 0 on --help
        return int(e.code or 0)
    if args.command == "list":
        for line in list_experiments():
            print(line)
        return EXIT_OK
    if args.command == "validate":
        return validate_command(args.configs)
    refs = builtin_names() if args.all else args.configs
    logger.debug(f"Run arguments: {json.dumps(vars(args), default=str)}")
    return run_command(refs, args.out, jobs=args.jobs, tol_scale=args.tol_scale)
