"""
Contenitore binario dei tensori (little-endian, dimensione fissa dell'header):

    magic  b"TSEG"   4 byte
    version u8       = 1
    dtype   u8       0 = float32, 1 = float64
    ndim    u8
    dims    ndim × u32
    payload prod(dims) valori in ordine row-major
"""

import os
import struct
import tempfile
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from ..application.errors import DataPreparationError
from ..domain.tensor import Tensor

MAGIC = b"TSEG"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_HEADER = struct.Struct("<4sBBB")

PathLike = Union[str, Path]


class TensorFormatError(DataPreparationError, ValueError):
    def __init__(self, reason: str, message: str, expected: Optional[int] = None, actual: Optional[int] = None):
        self.reason = reason
        self.expected = expected
        self.actual = actual
        super().__init__(f"[{reason}] {message}")


def encode_tensor(value: Union[Tensor, np.ndarray]) -> bytes:
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    code = _CODES.get(array.dtype)
    if code is None:
        raise TensorFormatError("bad_dtype", f"tipo non supportato: {array.dtype}")
    if array.ndim > 255:
        raise TensorFormatError("bad_dtype", f"troppe dimensioni: {array.ndim}")
    header = _HEADER.pack(MAGIC, VERSION, code, array.ndim)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes(order="C")
    return header + dims + payload


def decode_tensor(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Decodifica un tensore a partire da ``offset``; restituisce anche i byte consumati."""
    view = memoryview(buffer)[offset:]
    if len(view) < _HEADER.size:
        raise TensorFormatError(
            "truncated", "header incompleto", expected=_HEADER.size, actual=len(view)
        )
    magic, version, code, ndim = _HEADER.unpack_from(view, 0)
    if magic != MAGIC:
        raise TensorFormatError("bad_magic", f"magic {magic!r} diverso da {MAGIC!r}")
    if version != VERSION:
        raise TensorFormatError("bad_version", f"versione {version} non supportata")
    if code not in _DTYPES:
        raise TensorFormatError("bad_dtype", f"codice di tipo sconosciuto {code}")

    dims_end = _HEADER.size + 4 * ndim
    if len(view) < dims_end:
        raise TensorFormatError(
            "truncated", "dimensioni incomplete", expected=dims_end, actual=len(view)
        )
    shape = struct.unpack_from(f"<{ndim}I", view, _HEADER.size)
    dtype = _DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    available = len(view) - dims_end
    if available < expected:
        raise TensorFormatError(
            "truncated",
            f"payload di {available} byte, attesi {expected}",
            expected=expected,
            actual=available,
        )
    data = np.frombuffer(view[dims_end : dims_end + expected], dtype=dtype).reshape(shape)
    return data.astype(dtype.newbyteorder("="), copy=True), dims_end + expected


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise DataPreparationError(f"Impossibile scrivere il file {path}: {e}") from e


def write_tensor(path: PathLike, tensor: Union[Tensor, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_tensor(tensor))


def read_tensor(path: PathLike) -> np.ndarray:
    try:
        buffer = Path(path).read_bytes()
    except OSError as e:
        raise DataPreparationError(f"Impossibile leggere il tensore {path}: {e}") from e
    array, consumed = decode_tensor(buffer)
    if consumed != len(buffer):
        raise TensorFormatError(
            "truncated",
            f"{len(buffer) - consumed} byte in eccesso in {path}",
            expected=consumed,
            actual=len(buffer),
        )
    return array
