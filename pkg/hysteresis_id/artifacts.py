"""
JSON and CSV persistence shared by all stages.

Floats are written with 17 significant digits (CSV) or with Python's shortest
round-trip representation (JSON), so reloading an artifact reproduces the
stored values bit for bit.
"""
import json
import logging
import os
from typing import Any, Mapping

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"
# model ids and degree tags such as "2"
TEXT_COLUMNS = ("model_id", "degrees")


def _to_builtin(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}

    return value


def write_json(path: str, obj: Mapping[str, Any]):
    with open(path, "w") as f:
        json.dump(_to_builtin(obj), f, indent=2, sort_keys=True)
        f.write("\n")

    log.debug(f"Wrote {path}")


def read_json(path: str) -> dict:
    with open(path) as f:
        return json.load(f)


def write_frame(path: str, frame: pd.DataFrame):
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    log.debug(f"Wrote {path}")


def read_frame(path: str) -> pd.DataFrame:
    """Read a CSV artifact; identifier columns stay strings even when they look numeric."""
    header = pd.read_csv(path, nrows=0).columns
    dtype = {column: str for column in TEXT_COLUMNS if column in header}
    return pd.read_csv(path, float_precision="round_trip", dtype=dtype)


def complex_to_dict(values: np.ndarray) -> dict:
    values = np.asarray(values, dtype=complex)
    return {"re": values.real.tolist(), "im": values.imag.tolist()}


def complex_from_dict(data: Mapping[str, Any]) -> np.ndarray:
    return np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)


def exists(*paths: str) -> bool:
    return all(os.path.exists(path) for path in paths)
