"""Output formats: JSON, JSON lines, CSV tables and binary float vectors."""

import csv
import dataclasses
import json
import math
import struct
from enum import Enum
from typing import Any, BinaryIO, Dict, Iterable, List, Sequence, TextIO

import numpy as np

from .errors import PrivDiffError

# little-endian uint64 element count, then little-endian float64 values
_HEADER = struct.Struct('<Q')
_VECTOR_DTYPE = np.dtype('<f8')


def to_jsonable(obj: Any) -> Any:
    """
    Convert numpy values, dataclasses and enums to JSON-native types.

    Non-finite floats become the strings "inf" / "-inf" (NaN becomes None)
    so that the output is strict JSON.
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return [to_jsonable(item) for item in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    if isinstance(obj, dict):
        return {str(key): to_jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(item) for item in obj]
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True)


def write_json_lines(records: Iterable[Any], sink: TextIO) -> int:
    """Write one JSON object per line; returns the record count."""
    count = 0
    for record in records:
        sink.write(dumps(record) + '\n')
        count += 1
    return count


def write_csv(rows: Sequence[Dict[str, Any]], sink: TextIO, columns: List[str]):
    """
    Write an RFC-4180 table with a fixed header.

    Floats are written with ``repr`` so a rerun on identical inputs is
    byte-identical.
    """
    writer = csv.writer(sink, lineterminator='\r\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row.get(column)) for column in columns])


def _csv_cell(value: Any) -> str:
    value = to_jsonable(value)
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_vector(x: np.ndarray, sink, fmt: str = 'json'):
    """Write a score vector as a JSON array (text sink) or a length-prefixed binary blob."""
    x = np.asarray(x, dtype=np.float64)
    if fmt == 'json':
        sink.write(json.dumps(to_jsonable(x)) + '\n')
    elif fmt == 'binary':
        sink.write(_HEADER.pack(len(x)))
        sink.write(x.astype(_VECTOR_DTYPE).tobytes())
    else:
        raise ValueError(f"unknown vector format {fmt!r}")


def read_binary_vector(source: BinaryIO) -> np.ndarray:
    """Read a vector written by ``write_vector(..., fmt='binary')``."""
    header = source.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise PrivDiffError("truncated vector header")
    (length,) = _HEADER.unpack(header)
    payload = source.read(length * _VECTOR_DTYPE.itemsize)
    if len(payload) != length * _VECTOR_DTYPE.itemsize:
        raise PrivDiffError(f"vector payload shorter than the declared {length} values")
    return np.frombuffer(payload, dtype=_VECTOR_DTYPE).astype(np.float64)
