"""
Experiment manifest.

The manifest is a YAML file laid out like a build configuration: a ``stages``
list naming the stages to run in order, a few global keys, shared ``bouc_wen``
and ``newmark`` mappings, and one mapping per stage. Field names carry their
units. Every random quantity is driven by an explicit seed.
"""
import dataclasses
import logging
from dataclasses import dataclass
from typing import Any, Mapping, Optional

import yaml

from hysteresis_id.boucwen_sim import BoucWenParameters, NewmarkConfig
from hysteresis_id.config import SCHEMA_VERSION
from hysteresis_id.errors import ConfigurationError
from hysteresis_id.levmar import LMConfig
from hysteresis_id.signals import ExcitationSpec, GridKind, SweepSpec

log = logging.getLogger(__name__)

STAGE_NAMES = ("simulate", "distort", "bla", "fit", "validate")

DEFAULT_DEGREE_SETS = (
    (2,),
    (2, 3),
    (2, 3, 4),
    (2, 3, 4, 5),
    (2, 3, 4, 5, 6),
    (2, 3, 4, 5, 6, 7),
    (3, 5, 7),
)


@dataclass(frozen=True)
class SimulateSettings:
    excitation: ExcitationSpec
    experiments: int = 4
    periods: int = 4
    discard_periods: int = 1
    snr_db: Optional[float] = 40.0
    phase_seeds: tuple = (1, 2, 3, 4)
    validation_phase_seed: int = 100
    noise_seed: int = 1000

    def __post_init__(self):
        if len(self.phase_seeds) != self.experiments:
            raise ConfigurationError(
                f"{self.experiments} experiments need as many phase seeds, "
                f"got {len(self.phase_seeds)}"
            )
        if len(set(self.phase_seeds)) != len(self.phase_seeds):
            raise ConfigurationError("Phase seeds must be distinct")
        if self.validation_phase_seed in self.phase_seeds:
            raise ConfigurationError(
                "The validation phase seed must differ from the estimation seeds"
            )
        if self.periods < 2 or self.discard_periods < 1:
            raise ConfigurationError("Need periods >= 2 and discard_periods >= 1")


@dataclass(frozen=True)
class DistortSettings:
    excitation: ExcitationSpec
    amplitudes_n: tuple = (1.0, 10.0, 25.0, 50.0)
    periods: int = 4
    discard_periods: int = 1
    snr_db: Optional[float] = 40.0
    phase_seed: int = 11
    noise_seed: int = 12

    def __post_init__(self):
        if self.excitation.grid_kind is not GridKind.ODD_WITH_DETECTION:
            raise ConfigurationError("Distortion analysis needs an odd_with_detection grid")


@dataclass(frozen=True)
class BlaSettings:
    orders: tuple = (2, 3, 4, 5)
    dimensions: tuple = tuple(range(2, 11))
    lm: Optional[LMConfig] = LMConfig(max_iter=50)


@dataclass(frozen=True)
class FitSettings:
    order: Optional[int] = None
    dimension: Optional[int] = None
    degree_sets: tuple = DEFAULT_DEGREE_SETS
    include_input: bool = False
    output_degrees: tuple = ()
    lm: LMConfig = LMConfig()


@dataclass(frozen=True)
class ValidateSettings:
    sweep: SweepSpec
    amplitudes_n: tuple = tuple(float(a) for a in range(5, 105, 5))
    sweep_models: tuple = ((2,), (2, 3), (2, 3, 5), (2, 3, 5, 7))
    spectrum_amplitude_n: float = 40.0
    error_band_hz: tuple = (5.0, 200.0)


@dataclass(frozen=True)
class ExperimentManifest:
    stages: tuple
    bouc_wen: BoucWenParameters
    newmark: NewmarkConfig
    simulate: SimulateSettings
    distort: DistortSettings
    bla: BlaSettings
    fit: FitSettings
    validate: ValidateSettings
    schema_version: int = SCHEMA_VERSION
    output_dir: str = "output"
    workers: int = 1
    log_level: str = "INFO"

    def seeds(self) -> dict:
        return {
            "estimation_phase_seeds": list(self.simulate.phase_seeds),
            "validation_phase_seed": self.simulate.validation_phase_seed,
            "simulate_noise_seed": self.simulate.noise_seed,
            "detection_line_seed": self.distort.excitation.rng_seed,
            "distort_phase_seed": self.distort.phase_seed,
            "distort_noise_seed": self.distort.noise_seed,
        }

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["simulate"]["excitation"] = self.simulate.excitation.to_dict()
        data["distort"]["excitation"] = self.distort.excitation.to_dict()
        return data


def _section(data: Mapping[str, Any], key: str) -> dict:
    value = data.get(key) or {}
    if not isinstance(value, Mapping):
        raise ConfigurationError(f"'{key}' must be a mapping")
    return dict(value)


def _lm(value: Any, default: Optional[LMConfig]) -> Optional[LMConfig]:
    if value is None:
        return default
    if value is False:
        return None
    return LMConfig.from_dict(value)


def _tuples(sets) -> tuple:
    return tuple(tuple(int(d) for d in s) for s in sets)


def parse_manifest(data: Mapping[str, Any]) -> ExperimentManifest:
    version = data.get("schema_version", SCHEMA_VERSION)
    if version > SCHEMA_VERSION:
        raise ConfigurationError(
            f"Manifest schema version {version} is newer than "
            f"the supported version {SCHEMA_VERSION}"
        )

    stages = tuple(data.get("stages", STAGE_NAMES))
    unknown = [s for s in stages if s not in STAGE_NAMES]
    if unknown:
        raise ConfigurationError(f"Unknown stages {unknown}, expected some of {list(STAGE_NAMES)}")

    try:
        simulate = _section(data, "simulate")
        excitation = ExcitationSpec.from_dict(simulate.pop("excitation", {}))
        if "phase_seeds" in simulate:
            simulate["phase_seeds"] = tuple(simulate["phase_seeds"])

        distort = _section(data, "distort")
        odd = {"grid_kind": GridKind.ODD_WITH_DETECTION.value, "rng_seed": 7}
        odd.update(distort.pop("excitation", {}))
        distort_excitation = ExcitationSpec.from_dict({**excitation.to_dict(), **odd})
        if "amplitudes_n" in distort:
            distort["amplitudes_n"] = tuple(float(a) for a in distort["amplitudes_n"])

        bla = _section(data, "bla")
        bla_lm = _lm(bla.pop("lm", None), BlaSettings.lm)
        for key in ("orders", "dimensions"):
            if key in bla:
                bla[key] = tuple(bla[key])

        fit = _section(data, "fit")
        fit_lm = _lm(fit.pop("lm", None), FitSettings.lm) or FitSettings.lm
        if "degree_sets" in fit:
            fit["degree_sets"] = _tuples(fit["degree_sets"] or ())
        if "output_degrees" in fit:
            fit["output_degrees"] = tuple(fit["output_degrees"] or ())

        validate = _section(data, "validate")
        sweep = {"sample_rate_hz": excitation.sample_rate_hz, "amplitude_n": 1.0}
        sweep.update(validate.pop("sweep", {}))
        if "amplitudes_n" in validate:
            validate["amplitudes_n"] = tuple(float(a) for a in validate["amplitudes_n"])
        if "sweep_models" in validate:
            validate["sweep_models"] = _tuples(validate["sweep_models"])
        if "error_band_hz" in validate:
            validate["error_band_hz"] = tuple(validate["error_band_hz"])

        manifest = ExperimentManifest(
            stages=stages,
            bouc_wen=BoucWenParameters.from_dict(_section(data, "bouc_wen")),
            newmark=NewmarkConfig.from_dict(_section(data, "newmark")),
            simulate=SimulateSettings(excitation=excitation, **simulate),
            distort=DistortSettings(excitation=distort_excitation, **distort),
            bla=BlaSettings(lm=bla_lm, **bla),
            fit=FitSettings(lm=fit_lm, **fit),
            validate=ValidateSettings(sweep=SweepSpec.from_dict(sweep), **validate),
            schema_version=version,
            output_dir=data.get("output_dir", "output"),
            workers=int(data.get("workers", 1)),
            log_level=str(data.get("log_level", "INFO")),
        )
    except TypeError as e:
        raise ConfigurationError(f"Invalid manifest: {e}") from e

    log.debug(f"Parsed manifest with stages {list(manifest.stages)}")
    return manifest


def load_manifest(path: str) -> ExperimentManifest:
    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigurationError(f"Cannot read manifest {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Manifest {path} is not valid YAML: {e}") from e

    return parse_manifest(data)
