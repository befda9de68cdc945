import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from hysteresis_id import artifacts, path_utils
from hysteresis_id.config import (
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    EXIT_PREREQUISITE_MISSING,
    LOG_LEVEL,
    MANIFEST_FILE,
)
from hysteresis_id.errors import ConfigurationError, NumericalError
from hysteresis_id.manifest import ExperimentManifest, load_manifest
from hysteresis_id.stages import stages
from hysteresis_id.stages.stage import PrerequisiteMissingError, StageRunError
from hysteresis_id.summary import write_run_summary

STATUS_FILE = "status.json"

log = logging.getLogger(__name__)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="hysteresis_id",
        description="Bouc-Wen data synthesis, distortion analysis and PNLSS identification",
    )
    parser.add_argument(
        "stage",
        nargs="?",
        default="run",
        choices=["run", *stages],
        help="Stage to run, or 'run' for every stage listed in the manifest",
    )
    parser.add_argument("manifest", nargs="?", default=MANIFEST_FILE)
    parser.add_argument("-o", "--output-dir", help="Overrides the manifest output_dir")
    parser.add_argument("-j", "--workers", type=int, help="Overrides the manifest workers")
    parser.add_argument(
        "--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Overrides log_level"
    )
    return parser.parse_args(argv)


def write_status(output_dir: str, state: str, completed: list[str], stage=None, message=""):
    artifacts.write_json(
        os.path.join(output_dir, STATUS_FILE),
        {"state": state, "stage": stage, "message": message, "completed": completed},
    )


def generate_stages(names, manifest: ExperimentManifest, output_dir: str, workers: int):
    for name in names:
        stage = stages[name]
        yield stage(output_dir, path_utils.stage_dir(output_dir, name), manifest, workers)


def run_stages(
    names: Sequence[str], manifest: ExperimentManifest, output_dir: str, workers: int
) -> list[str]:
    completed = []
    for stage in generate_stages(names, manifest, output_dir, workers):
        if stage.name in ("fit", "validate") and not manifest.fit.degree_sets:
            log.info("No degree set configured, stopping after linear identification")
            break

        log.info(f"Running stage {stage.name}")
        try:
            stage.run()
        except Exception as e:
            log.error(f"Stage {stage.name} failed: {e}")
            write_status(output_dir, "failed", completed, stage.name, str(e))
            raise
        completed.append(stage.name)

    write_status(output_dir, "completed", completed)
    return completed


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=args.log_level or LOG_LEVEL)

    try:
        manifest = load_manifest(args.manifest)
    except ConfigurationError as e:
        log.error(str(e))
        return EXIT_CONFIG_ERROR

    if args.log_level is None:
        logging.getLogger().setLevel(manifest.log_level)

    output_dir = os.path.realpath(args.output_dir or manifest.output_dir)
    os.makedirs(output_dir, exist_ok=True)
    workers = args.workers or manifest.workers

    match args.stage:
        case "run":
            names = list(manifest.stages)
        case _:
            names = [args.stage]

    try:
        completed = run_stages(names, manifest, output_dir, workers)
    except PrerequisiteMissingError as e:
        log.error(str(e))
        return EXIT_PREREQUISITE_MISSING
    except (ConfigurationError, StageRunError) as e:
        log.error(str(e))
        return EXIT_CONFIG_ERROR
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as e:
        log.error(str(e))
        return EXIT_NUMERICAL_FAILURE

    write_run_summary(manifest, output_dir, completed)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
