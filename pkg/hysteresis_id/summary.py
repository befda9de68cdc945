"""
Run summary: ``run.json`` (versions, seeds, completed stages) and a rendered
``summary.md`` with the model comparison and sweep tables when they exist.
Neither file holds timestamps, so identical runs produce identical summaries.
"""
import logging
import os
import platform

import numpy as np
import pandas as pd
import scipy
import yaml
from jinja2 import Environment, PackageLoader

import hysteresis_id
from hysteresis_id import artifacts
from hysteresis_id.manifest import ExperimentManifest
from hysteresis_id.stages.validate import MODELS_FILE, SWEEP_FILE

log = logging.getLogger(__name__)

RUN_FILE = "run.json"
SUMMARY_FILE = "summary.md"


def versions() -> dict:
    return {
        "hysteresis_id": hysteresis_id.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pyyaml": yaml.__version__,
    }


def _number(value, fmt: str = ".2f") -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    return format(value, fmt)


def _table(path: str):
    if not os.path.exists(path):
        return None
    return artifacts.read_frame(path).to_dict(orient="records")


def _sweep_minima(sweep) -> list[dict]:
    if not sweep:
        return []

    frame = pd.DataFrame(sweep)
    rows = []
    for model_id, group in frame.groupby("model_id", sort=False):
        bounded = group[~group["diverged"].astype(bool)]
        diverged = group[group["diverged"].astype(bool)]
        best = bounded.loc[bounded["relative_error_pct"].idxmin()] if not bounded.empty else None
        rows.append(
            {
                "model_id": model_id,
                "best_amplitude_n": None if best is None else best["amplitude_n"],
                "best_error_pct": None if best is None else best["relative_error_pct"],
                "first_divergent_n": None if diverged.empty else diverged["amplitude_n"].min(),
            }
        )
    return rows


def write_run_summary(manifest: ExperimentManifest, output_dir: str, completed: list[str]):
    run = {
        "schema_version": manifest.schema_version,
        "stages": list(completed),
        "seeds": manifest.seeds(),
        "versions": versions(),
        "manifest": manifest.to_dict(),
    }
    artifacts.write_json(os.path.join(output_dir, RUN_FILE), run)

    validate_dir = os.path.join(output_dir, "validate")
    sweep = _table(os.path.join(validate_dir, SWEEP_FILE))
    env = Environment(
        loader=PackageLoader("hysteresis_id", "templates"),
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["number"] = _number
    template = env.get_template("summary.md.jinja2")
    with open(os.path.join(output_dir, SUMMARY_FILE), "w") as f:
        f.write(
            template.render(
                stages=completed,
                seeds=manifest.seeds(),
                versions=run["versions"],
                models=_table(os.path.join(validate_dir, MODELS_FILE)),
                sweep=_sweep_minima(sweep),
                excitation=manifest.simulate.excitation,
                simulate=manifest.simulate,
            )
        )

    log.info(f"Created {SUMMARY_FILE} in {output_dir}")
