import logging
import os
from abc import ABC, abstractmethod

from hysteresis_id import artifacts, boucwen_sim
from hysteresis_id.boucwen_sim import TimeRecord
from hysteresis_id.manifest import ExperimentManifest

log = logging.getLogger(__name__)


class Stage(ABC):
    name: str

    @abstractmethod
    def __init__(
        self,
        input_dir: str,
        output_dir: str,
        manifest: ExperimentManifest,
        workers: int = 1,
    ):
        # input_dir is the run root holding every stage directory,
        # output_dir is this stage's own directory under it
        self.input_dir = input_dir
        self.output_dir = output_dir
        self.manifest = manifest
        self.workers = workers

    @abstractmethod
    def run(self):
        pass

    def require(self, stage: str, *names: str) -> list[str]:
        paths = [os.path.join(self.input_dir, stage, name) for name in names]
        for path in paths:
            if not artifacts.exists(path):
                log.error(f"{self.name}: missing artifact {path}")
                raise PrerequisiteMissingError(stage, path)

        return paths

    def load_record(self, stage: str, name: str) -> TimeRecord:
        self.require(stage, f"{name}.csv", f"{name}.json")
        return boucwen_sim.load_record(os.path.join(self.input_dir, stage), name)

    def output(self, name: str) -> str:
        return os.path.join(self.output_dir, name)


class StageRunError(Exception):
    pass


class PrerequisiteMissingError(StageRunError):
    def __init__(self, stage: str, path: str):
        super().__init__(f"Missing {path}, run the '{stage}' stage first")
        self.stage = stage
        self.path = path
