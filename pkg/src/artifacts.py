"""
Atomic writers for every file a run produces: JSON, CSV tables and sparse
matrix triplets
"""

import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pydantic import BaseModel

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"

PathLike = Union[str, Path]


def to_jsonable(value: Any) -> Any:
    """numpy scalars and arrays to Python, non-finite floats to None"""
    if isinstance(value, BaseModel):
        return to_jsonable(value.model_dump())
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (complex, np.complexfloating)):
        return [to_jsonable(value.real), to_jsonable(value.imag)]
    if isinstance(value, Path):
        return value.as_posix()
    return value


def _atomic_write(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.remove(tmp)
        except OSError:
            pass
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_json(path: PathLike, payload: Any) -> Path:
    text = json.dumps(to_jsonable(payload), indent=2, sort_keys=True, ensure_ascii=False)
    return _atomic_write(path, text + "\n")


def write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    return _atomic_write(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def write_triplets(path: PathLike, matrix: sp.spmatrix) -> Path:
    """One 'i j value' line per stored entry, row-major"""
    coo = sp.csr_matrix(matrix).tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{i} {j} {v:.17g}" for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order])]
    return _atomic_write(path, "\n".join(lines) + "\n")


def read_json(path: PathLike) -> Any:
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)
