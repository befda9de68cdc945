import logging

import numpy as np
import pandas as pd

from hysteresis_id import artifacts, linear_id
from hysteresis_id.errors import NumericalError
from hysteresis_id.linear_id import FrfEstimate, LinearModel
from hysteresis_id.signals import db
from hysteresis_id.stages.simulate import VALIDATION_NAME, estimation_name
from hysteresis_id.stages.stage import Stage

log = logging.getLogger(__name__)

FRF_FILE = "bla.json"
SELECTED_FILE = "selected.json"


def linear_model_name(order: int, dimension: int) -> str:
    return f"linear_n{order}_i{dimension}.json"


def load_linear(stage: Stage, order: int, dimension: int) -> LinearModel:
    (path,) = stage.require("bla", linear_model_name(order, dimension))
    return LinearModel.from_dict(artifacts.read_json(path))


class BlaStage(Stage):
    """
    Best linear approximation from the estimation records, then a subspace fit
    (refined by Levenberg-Marquardt) for every (order, dimension) pair. The
    pair with the lowest validation error is recorded as the selected model.
    """

    name = "bla"

    def __init__(self, input_dir, output_dir, manifest, workers=1):
        super().__init__(input_dir, output_dir, manifest, workers)

    def run(self):
        settings = self.manifest.bla
        records = [
            self.load_record("simulate", estimation_name(m))
            for m in range(self.manifest.simulate.experiments)
        ]
        validation = self.load_record("simulate", VALIDATION_NAME)

        frf = linear_id.estimate_bla(records)
        artifacts.write_json(self.output(FRF_FILE), frf.to_dict())
        artifacts.write_frame(self.output("bla.csv"), frf.to_frame())
        log.info(f"Created BLA over {len(frf.excited_lines)} lines in {self.output_dir}")

        table, models = linear_id.scan_linear_models(
            frf, settings.orders, settings.dimensions, settings.lm
        )
        artifacts.write_frame(self.output("linear_scan.csv"), table)
        for (n, i), model in models.items():
            artifacts.write_json(self.output(linear_model_name(n, i)), model.to_dict())

        if not models:
            log.error("No (order, dimension) pair produced a linear model")
            raise NumericalError("Subspace identification failed on the whole grid")

        (order, dimension), errors = linear_id.select_order(models, validation)
        artifacts.write_json(
            self.output(SELECTED_FILE),
            {
                "order": order,
                "dimension": dimension,
                "validation_errors": [
                    {"order": n, "dimension": i, "error_db": e} for (n, i), e in errors.items()
                ],
            },
        )
        selected = models[(order, dimension)]
        artifacts.write_frame(self.output("modal.csv"), selected.modal_report())
        artifacts.write_frame(self.output("fit_error.csv"), self._fit_errors(frf, models, errors))
        log.info(f"Created {SELECTED_FILE} (n = {order}, i = {dimension}) in {self.output_dir}")

    @staticmethod
    def _fit_errors(frf: FrfEstimate, models: dict, errors: dict) -> pd.DataFrame:
        """Model error per line for the best dimension of every order, next to the BLA level."""
        frame = pd.DataFrame(
            {
                "frequency_hz": frf.frequencies_hz,
                "bla_db": db(frf.g_bla),
                "total_distortion_db": linear_id.total_distortion_db(frf),
                "noise_db": 10 * np.log10(np.maximum(frf.noise_variance, np.finfo(float).tiny)),
            }
        )
        for order in sorted({n for n, _ in models}):
            keys = [k for k in models if k[0] == order]
            best = min(keys, key=errors.get)
            frame[f"fit_error_n{order}_db"] = linear_id.fit_error_db(models[best], frf)
        return frame
