import logging

import pandas as pd

from hysteresis_id import artifacts
from hysteresis_id.distortion import DistortionExperiment, distortion_sweep, mean_level_db
from hysteresis_id.path_utils import amplitude_tag
from hysteresis_id.stages.stage import Stage

log = logging.getLogger(__name__)


def report_name(amplitude_n: float) -> str:
    return f"distortion_{amplitude_tag(amplitude_n)}"


class DistortStage(Stage):
    """Odd/even distortion and noise levels for each configured input amplitude."""

    name = "distort"

    def __init__(self, input_dir, output_dir, manifest, workers=1):
        super().__init__(input_dir, output_dir, manifest, workers)

    def run(self):
        settings = self.manifest.distort
        experiment = DistortionExperiment(
            params=self.manifest.bouc_wen,
            newmark=self.manifest.newmark,
            spec=settings.excitation,
            total_periods=settings.periods + settings.discard_periods,
            discard_periods=settings.discard_periods,
            snr_db=settings.snr_db,
            noise_seed=settings.noise_seed,
            phase_seed=settings.phase_seed,
        )
        reports = distortion_sweep(settings.amplitudes_n, experiment, self.workers)

        rows = []
        for amplitude, report in zip(settings.amplitudes_n, reports):
            name = report_name(amplitude)
            artifacts.write_frame(self.output(f"{name}.csv"), report.to_frame())
            freqs = report.frequencies_hz
            row = {
                "amplitude_n": amplitude,
                "rms_input_n": report.rms_input_n,
                "output_db": mean_level_db(report.output_at_excited, freqs),
                "odd_db": mean_level_db(report.odd_distortion, freqs),
                "even_db": mean_level_db(report.even_distortion, freqs),
                "noise_db": mean_level_db(report.noise_level, freqs),
            }
            artifacts.write_json(self.output(f"{name}.json"), row)
            rows.append(row)
            log.info(f"Created {name} in {self.output_dir}")

        artifacts.write_frame(self.output("levels.csv"), pd.DataFrame(rows))
