import numpy as np
import pytest
import yaml
from scipy import signal as sps

from hysteresis_id.boucwen_sim import (
    BoucWenParameters,
    NewmarkConfig,
    TimeRecord,
    steady_state_record,
)
from hysteresis_id.levmar import LMConfig
from hysteresis_id.linear_id import LinearModel, estimate_bla, scan_linear_models, select_order
from hysteresis_id.pnlss import PnlssModel, build_basis, estimate_pnlss
from hysteresis_id.signals import ExcitationSpec, GridKind, design_multisine

RESONANCE_HZ = 35.0
RESONANCE_DAMPING = 0.02


@pytest.fixture
def small_spec():
    return ExcitationSpec(
        sample_rate_hz=750.0,
        num_samples_per_period=1024,
        band_low_hz=5.0,
        band_high_hz=150.0,
        target_rms_n=50.0,
    )


@pytest.fixture
def odd_spec(small_spec):
    return ExcitationSpec(**{**small_spec.to_dict(), "grid_kind": GridKind.ODD_WITH_DETECTION})


@pytest.fixture
def fast_newmark():
    return NewmarkConfig(step_hz=7500.0)


def resonator(sample_rate_hz: float = 750.0) -> LinearModel:
    """Discretised mass-spring-damper with displacement output."""
    wn = 2 * np.pi * RESONANCE_HZ
    a = np.array([[0.0, 1.0], [-(wn**2), -2 * RESONANCE_DAMPING * wn]])
    b = np.array([[0.0], [1.0]])
    c = np.array([[1.0, 0.0]])
    d = np.zeros((1, 1))
    ad, bd, cd, dd, _ = sps.cont2discrete((a, b, c, d), 1.0 / sample_rate_hz, method="zoh")
    return LinearModel(ad, bd, cd, dd, sample_rate_hz)


@pytest.fixture
def linear_model():
    return resonator()


class HystereticStudy:
    """
    Full-size identification of the default oscillator at 50 N RMS: four
    experiments of four periods, a fresh validation record, the scanned linear
    models and PNLSS models fitted on demand.
    """

    spec = ExcitationSpec(750.0, 8192, 5.0, 150.0, 50.0)
    newmark = NewmarkConfig(step_hz=7500.0)
    params = BoucWenParameters()

    def __init__(self):
        self.records = [self.record(m + 1, 100 + m) for m in range(4)]
        self.validation = self.record(100, 2000)
        self.frf = estimate_bla(self.records)
        self.table, self.linear_models = scan_linear_models(
            self.frf, [2, 3], range(4, 11), LMConfig(max_iter=50)
        )
        third = {key: model for key, model in self.linear_models.items() if key[0] == 3}
        key, _ = select_order(third, self.validation)
        self.linear = third[key]
        self._pnlss = {}

    def record(self, phase_seed: int, noise_seed: int) -> TimeRecord:
        design = design_multisine(self.spec, phase_seed)
        return steady_state_record(
            self.params,
            self.newmark,
            design.sample(),
            self.spec.sample_rate_hz,
            total_periods=5,
            discard_periods=1,
            snr_db=40.0,
            noise_seed=noise_seed,
            excited_lines=design.lines,
        )

    def best_linear(self, order: int) -> LinearModel:
        rows = self.table[(self.table.n == order) & (self.table.status == "ok")]
        best = rows.loc[rows["refined_cost"].idxmin()]
        return self.linear_models[(order, int(best.i))]

    def pnlss(self, degrees: tuple) -> PnlssModel:
        if degrees not in self._pnlss:
            self._pnlss[degrees], _ = estimate_pnlss(
                self.linear,
                build_basis(self.linear.order, False, degrees),
                self.records,
                LMConfig(max_iter=50),
                self.validation,
            )
        return self._pnlss[degrees]


@pytest.fixture(scope="session")
def hysteretic_study():
    return HystereticStudy()


def tiny_manifest(**overrides) -> dict:
    manifest = {
        "schema_version": 1,
        "stages": ["simulate", "bla", "fit", "validate"],
        "output_dir": "output",
        "workers": 1,
        "log_level": "WARNING",
        "newmark": {"step_hz": 7500.0},
        "simulate": {
            "excitation": {
                "sample_rate_hz": 750.0,
                "num_samples_per_period": 256,
                "band_low_hz": 5.0,
                "band_high_hz": 150.0,
                "target_rms_n": 50.0,
                "grid_kind": "full",
            },
            "experiments": 2,
            "periods": 2,
            "discard_periods": 1,
            "snr_db": 40.0,
            "phase_seeds": [1, 2],
            "validation_phase_seed": 3,
            "noise_seed": 4,
        },
        "bla": {"orders": [2], "dimensions": [3, 4], "lm": {"max_iter": 5}},
        "fit": {"degree_sets": [[2]], "lm": {"max_iter": 2}},
        "validate": {
            "sweep": {"f_start_hz": 20.0, "f_end_hz": 25.0, "rate_hz_per_min": 600.0},
            "amplitudes_n": [5.0],
            "sweep_models": [],
        },
    }
    manifest.update(overrides)
    return manifest


def write_manifest(path, manifest: dict) -> str:
    with open(path, "w") as f:
        yaml.safe_dump(manifest, f)
    return str(path)
