import json
from pathlib import Path

import numpy as np

from .async_utils import run_sync


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return obj.as_posix()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def dumps(payload: dict) -> str:
    """Sorted keys and fixed indentation, so equal payloads give equal bytes."""
    return json.dumps(payload, sort_keys=True, indent=2, default=_plain) + "\n"


def save_json(payload: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload), encoding="utf-8", newline="\n")
    return path


@run_sync
def write_json(payload: dict, path: str | Path) -> Path:
    return save_json(payload, path)
