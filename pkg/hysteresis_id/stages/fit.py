import functools
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import pandas as pd

from hysteresis_id import artifacts
from hysteresis_id.boucwen_sim import TimeRecord
from hysteresis_id.levmar import LMTrace
from hysteresis_id.linear_id import LinearModel
from hysteresis_id.manifest import FitSettings
from hysteresis_id.path_utils import degree_tag
from hysteresis_id.pnlss import PnlssModel, build_basis, estimate_pnlss
from hysteresis_id.stages.bla import SELECTED_FILE, load_linear
from hysteresis_id.stages.simulate import VALIDATION_NAME, estimation_name
from hysteresis_id.stages.stage import Stage, StageRunError

log = logging.getLogger(__name__)

LINEAR_FILE = "linear.json"


def model_name(degrees) -> str:
    return f"pnlss_{degree_tag(degrees)}.json"


def trace_name(degrees) -> str:
    return f"trace_{degree_tag(degrees)}.csv"


def _fit_degrees(
    degrees: tuple,
    linear: LinearModel,
    records: list[TimeRecord],
    validation: TimeRecord,
    settings: FitSettings,
) -> tuple[PnlssModel, LMTrace]:
    basis = build_basis(linear.order, settings.include_input, degrees)
    output_basis = (
        build_basis(linear.order, settings.include_input, settings.output_degrees)
        if settings.output_degrees
        else None
    )
    return estimate_pnlss(
        linear, basis, records, settings.lm, validation_record=validation, output_basis=output_basis
    )


class FitStage(Stage):
    """PNLSS estimation for every configured monomial degree set."""

    name = "fit"

    def __init__(self, input_dir, output_dir, manifest, workers=1):
        super().__init__(input_dir, output_dir, manifest, workers)

    def _linear_key(self) -> tuple[int, int]:
        settings = self.manifest.fit
        (path,) = self.require("bla", SELECTED_FILE)
        selected = artifacts.read_json(path)
        if settings.order is None:
            return selected["order"], settings.dimension or selected["dimension"]
        if settings.dimension is not None:
            return settings.order, settings.dimension

        candidates = [e for e in selected["validation_errors"] if e["order"] == settings.order]
        if not candidates:
            log.error(f"No linear model of order {settings.order} was identified")
            raise StageRunError(f"Order {settings.order} is not in the linear model scan")
        best = min(candidates, key=lambda e: e["error_db"])
        return settings.order, best["dimension"]

    def run(self):
        settings = self.manifest.fit
        order, dimension = self._linear_key()
        linear = load_linear(self, order, dimension)
        artifacts.write_json(self.output(LINEAR_FILE), linear.to_dict())
        log.info(f"Starting from the linear model n = {order}, i = {dimension}")

        records = [
            self.load_record("simulate", estimation_name(m))
            for m in range(self.manifest.simulate.experiments)
        ]
        validation = self.load_record("simulate", VALIDATION_NAME)

        fit = functools.partial(
            _fit_degrees, linear=linear, records=records, validation=validation, settings=settings
        )
        if self.workers > 1 and len(settings.degree_sets) > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(fit, settings.degree_sets))
        else:
            results = [fit(d) for d in settings.degree_sets]

        rows = []
        for degrees, (model, trace) in zip(settings.degree_sets, results):
            artifacts.write_json(self.output(model_name(degrees)), model.to_dict())
            artifacts.write_frame(self.output(trace_name(degrees)), trace.to_frame())
            rows.append(self._summary(degrees, model, trace))
            log.info(f"Created {model_name(degrees)} in {self.output_dir}")

        artifacts.write_frame(self.output("fits.csv"), pd.DataFrame(rows))

    @staticmethod
    def _summary(degrees, model: PnlssModel, trace: LMTrace) -> dict:
        final: Optional[dict] = next(
            (e for e in reversed(trace.entries) if e["accepted"]), None
        )
        return {
            "degrees": degree_tag(degrees),
            "parameter_count": model.parameter_count,
            "iterations": int(trace.entries[-1]["iteration"]) if trace.entries else 0,
            "stop_reason": trace.stop_reason,
            "cost": final["cost"] if final else None,
            "est_error_db": final.get("est_error_db") if final else None,
            "val_error_db": final.get("val_error_db") if final else None,
        }
