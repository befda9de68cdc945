import dataclasses
import functools
import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from hysteresis_id import artifacts, boucwen_sim
from hysteresis_id.boucwen_sim import TimeRecord
from hysteresis_id.manifest import ExperimentManifest
from hysteresis_id.signals import design_multisine
from hysteresis_id.stages.stage import Stage

log = logging.getLogger(__name__)

LOOP_FREQUENCY_HZ = 1.0
LOOP_AMPLITUDE_N = 120.0


def estimation_name(m: int) -> str:
    return f"estimation_{m}"


VALIDATION_NAME = "validation"


def _record(phase_seed: int, noise_seed: int, manifest: ExperimentManifest) -> TimeRecord:
    settings = manifest.simulate
    design = design_multisine(settings.excitation, phase_seed)
    record = boucwen_sim.steady_state_record(
        manifest.bouc_wen,
        manifest.newmark,
        design.sample(),
        settings.excitation.sample_rate_hz,
        settings.periods + settings.discard_periods,
        settings.discard_periods,
        snr_db=settings.snr_db,
        noise_seed=noise_seed,
        excited_lines=design.lines,
    )
    record.metadata["phase_seed"] = phase_seed
    return record


class SimulateStage(Stage):
    """
    Synthesizes the estimation and validation multisine records. Each record
    holds the last P steady-state periods of a Bouc-Wen run, decimated to the
    acquisition rate with noise added on the output.
    """

    name = "simulate"

    def __init__(self, input_dir, output_dir, manifest, workers=1):
        super().__init__(input_dir, output_dir, manifest, workers)

    def run(self):
        settings = self.manifest.simulate
        jobs = [
            (seed, settings.noise_seed + m) for m, seed in enumerate(settings.phase_seeds)
        ]
        jobs.append((settings.validation_phase_seed, settings.noise_seed + len(jobs)))
        names = [estimation_name(m) for m in range(settings.experiments)] + [VALIDATION_NAME]

        log.info(
            f"Simulating {settings.experiments} estimation experiments and one validation "
            f"experiment at {settings.excitation.target_rms_n} N RMS"
        )
        make = functools.partial(_record, manifest=self.manifest)
        if self.workers > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                records = list(pool.map(make, *zip(*jobs)))
        else:
            records = [make(*job) for job in jobs]

        for name, record in zip(names, records):
            boucwen_sim.save_record(record, self.output_dir, name)
            log.info(
                f"Created {name} in {self.output_dir} "
                f"(transient {record.transient_level_db:.1f} dB)"
            )

        self._write_system_description()

    def _write_system_description(self):
        params = self.manifest.bouc_wen
        modal = boucwen_sim.linearized_modal(params)
        artifacts.write_json(
            self.output("modal.json"),
            {
                "natural_frequency_hz": modal.natural_frequency_hz,
                "damping_ratio": modal.damping_ratio,
                "overdamped": modal.overdamped,
                "poles": artifacts.complex_to_dict(modal.poles),
                "bouc_wen": params.to_dict(),
            },
        )
        log.info(
            f"Linearised system: {modal.natural_frequency_hz:.2f} Hz, "
            f"{100 * modal.damping_ratio:.2f} % damping"
        )

        loops = {}
        variants = (("hysteretic", params), ("beta_zero", dataclasses.replace(params, beta=0.0)))
        for label, variant in variants:
            u, y = boucwen_sim.hysteresis_loop(
                variant, self.manifest.newmark, LOOP_FREQUENCY_HZ, LOOP_AMPLITUDE_N
            )
            loops[f"input_{label}_n"] = u
            loops[f"output_{label}_m"] = y
            log.debug(f"Loop area ({label}): {boucwen_sim.loop_area(u, y):.3e} N m")

        frame = pd.DataFrame(loops)
        frame.insert(0, "time_s", np.arange(len(frame)) / self.manifest.newmark.step_hz)
        artifacts.write_frame(self.output("hysteresis_loop.csv"), frame)
