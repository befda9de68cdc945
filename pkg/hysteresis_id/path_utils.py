import os
from typing import Iterable


def real_join(*paths: str) -> str:
    return os.path.realpath(os.path.join(*paths))


# Returns the directory holding the artifacts of a stage, creating it if needed
# e.g. stage_dir("/out", "bla") -> "/out/bla"
def stage_dir(output_dir: str, stage: str, create: bool = True) -> str:
    path = real_join(output_dir, stage)
    if create and not os.path.exists(path):
        os.makedirs(path)

    return path


# Tag used in artifact names for a monomial degree set
# e.g. degree_tag([3, 5, 7]) -> "3-5-7", degree_tag([]) -> "linear"
def degree_tag(degrees: Iterable[int]) -> str:
    degrees = sorted(degrees)
    if not degrees:
        return "linear"

    return "-".join(str(d) for d in degrees)


# Tag used for amplitude-indexed artifacts, e.g. amplitude_tag(2.5) -> "2.5N"
def amplitude_tag(amplitude_n: float) -> str:
    return f"{amplitude_n:g}N"
