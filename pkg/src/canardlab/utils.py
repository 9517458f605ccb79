from pathlib import Path
from enum import Enum
import dataclasses
import json
import math

import numpy as np


def next_free_folder(base: Path) -> Path:
    """
    If 'path/to/base' does not exist, return 'path/to/base'. Otherwise attempt 'path/to/base_0', 'path/to/base_1', etc.
    until finding a non-existent Path, then return that.
    """
    base = Path(base)

    if not base.exists():
        return base

    i = 0
    while True:
        candidate = base.with_name(f"{base.name}_{i}")
        if not candidate.exists():
            return candidate
        i += 1


def _finite_or_string(value: float):
    if math.isfinite(value):
        return value
    if math.isnan(value):
        return "nan"
    return "inf" if value > 0 else "-inf"


def to_jsonable(o):
    """Recursively convert numpy types, complex numbers, enums, paths and dataclasses into plain JSON types"""
    if isinstance(o, dict):
        return {str(k): to_jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [to_jsonable(v) for v in o]
    if isinstance(o, Enum):
        return o.value
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, (bool, np.bool_)):
        return bool(o)
    if isinstance(o, (int, np.integer)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        return _finite_or_string(float(o))
    if isinstance(o, (complex, np.complexfloating)):
        return {"re": _finite_or_string(o.real), "im": _finite_or_string(o.imag)}
    if isinstance(o, np.ndarray):
        return to_jsonable(o.tolist())
    if dataclasses.is_dataclass(o) and not isinstance(o, type):
        return to_jsonable(
            {f.name: getattr(o, f.name) for f in dataclasses.fields(o)}
        )
    return o


class ExtendedJSONEncoder(json.JSONEncoder):
    def default(self, o):
        converted = to_jsonable(o)
        if converted is o:
            return super().default(o)
        return converted

    def encode(self, o):
        # non-finite floats are not valid JSON, they never reach `default`
        return super().encode(to_jsonable(o))

    def iterencode(self, o, _one_shot=False):
        return super().iterencode(to_jsonable(o), _one_shot)


def dumps(dictionary: dict) -> str:
    """Deterministic JSON text: sorted keys, indent=4, trailing newline"""
    return json.dumps(dictionary, indent=4, sort_keys=True, cls=ExtendedJSONEncoder) + "\n"


def dump_dict_to_file(file: Path, dictionary: dict) -> None:
    """
    Write `dictionary` as JSON to `file` (with indent=4 and sorted keys).
    """
    file = Path(file)
    file.parent.mkdir(exist_ok=True, parents=True)
    with open(file, "w", newline="\n") as f:
        f.write(dumps(dictionary))
