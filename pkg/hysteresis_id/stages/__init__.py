from hysteresis_id.stages.bla import BlaStage
from hysteresis_id.stages.distort import DistortStage
from hysteresis_id.stages.fit import FitStage
from hysteresis_id.stages.simulate import SimulateStage
from hysteresis_id.stages.validate import ValidateStage

stages = {
    "simulate": SimulateStage,
    "distort": DistortStage,
    "bla": BlaStage,
    "fit": FitStage,
    "validate": ValidateStage,
}
