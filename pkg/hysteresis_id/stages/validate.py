import logging

import numpy as np
import pandas as pd

from hysteresis_id import artifacts, validation
from hysteresis_id.linear_id import LinearModel
from hysteresis_id.path_utils import degree_tag
from hysteresis_id.pnlss import PnlssModel
from hysteresis_id.stages.fit import LINEAR_FILE, model_name
from hysteresis_id.stages.simulate import VALIDATION_NAME
from hysteresis_id.stages.stage import Stage

log = logging.getLogger(__name__)

MODELS_FILE = "models.csv"
SWEEP_FILE = "sweep.csv"


def report_name(model_id: str) -> str:
    return f"validation_{model_id}.json"


class ValidateStage(Stage):
    """
    Multisine validation of the linear and PNLSS models, relative errors on the
    sine sweep amplitude grid and the sweep error spectra at one amplitude.
    """

    name = "validate"

    def __init__(self, input_dir, output_dir, manifest, workers=1):
        super().__init__(input_dir, output_dir, manifest, workers)

    def _models(self) -> dict:
        (path,) = self.require("fit", LINEAR_FILE)
        models = {"linear": LinearModel.from_dict(artifacts.read_json(path))}
        for degrees in self.manifest.fit.degree_sets:
            (path,) = self.require("fit", model_name(degrees))
            models[degree_tag(degrees)] = PnlssModel.from_dict(artifacts.read_json(path))

        return models

    def run(self):
        settings = self.manifest.validate
        models = self._models()
        record = self.load_record("simulate", VALIDATION_NAME)

        rows = []
        for model_id, model in models.items():
            report = validation.validate_multisine(
                model, record, model_id, band=settings.error_band_hz
            )
            artifacts.write_json(self.output(report_name(model_id)), report.to_dict())
            artifacts.write_frame(
                self.output(f"error_spectrum_{model_id}.csv"), report.spectrum_frame()
            )
            rows.append(validation.summary_row(model_id, model, report))
        artifacts.write_frame(self.output(MODELS_FILE), pd.DataFrame(rows))
        log.info(f"Created {MODELS_FILE} in {self.output_dir}")

        sweep_models = {}
        for degrees in settings.sweep_models:
            tag = degree_tag(degrees)
            if tag not in models:
                log.warning(f"Sweep model {tag} was not fitted, skipping it")
                continue
            sweep_models[tag] = models[tag]
        if not sweep_models:
            log.info("No sweep model configured, skipping the sweep validation")
            return

        table = validation.validate_sweep(
            sweep_models,
            self.manifest.bouc_wen,
            self.manifest.newmark,
            settings.sweep,
            settings.amplitudes_n,
            self.workers,
        )
        artifacts.write_frame(self.output(SWEEP_FILE), table)
        for model_id in sweep_models:
            first = validation.first_divergent_amplitude(table, model_id)
            if first is not None:
                log.info(f"{model_id} first diverges at {first} N")
        log.info(f"Created {SWEEP_FILE} in {self.output_dir}")

        artifacts.write_frame(
            self.output("sweep_error_spectrum.csv"), self._sweep_spectra(sweep_models)
        )

    def _sweep_spectra(self, models: dict) -> pd.DataFrame:
        settings = self.manifest.validate
        exact = validation.exact_sweep_response(
            self.manifest.bouc_wen,
            self.manifest.newmark,
            settings.sweep.with_amplitude(settings.spectrum_amplitude_n),
        )

        frame = None
        for model_id, model in models.items():
            y, divergence = validation.simulate(model, exact.input)
            if divergence is not None:
                log.warning(
                    f"{model_id} diverged on the {settings.spectrum_amplitude_n} N sweep, "
                    "no error spectrum"
                )
                y = np.full(len(exact.output), np.nan)
            freqs, spectrum = validation.error_spectrum(
                y, exact.output, exact.sample_rate_hz, settings.error_band_hz
            )
            if frame is None:
                frame = pd.DataFrame({"frequency_hz": freqs})
            frame[f"{model_id}_db"] = spectrum

        return frame
