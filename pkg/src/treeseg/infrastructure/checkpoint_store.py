"""
Checkpoint binario più sidecar JSON.

    magic b"TSCK" | version u8 | count u32 | count × (u16 lunghezza nome, nome UTF-8, corpo TSEG)

I momenti di Adam sono salvati come voci ``adam.m.<parametro>`` e ``adam.v.<parametro>``;
il sidecar ``<file>.json`` contiene spec del modello, epoca, seme, loss e stato dell'ottimizzatore.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from ..application.errors import DataPreparationError, MissingDataError
from ..domain.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON
from ..domain.interfaces import Checkpoint, ICheckpointStore, PathLike
from ..domain.optim import AdamState
from ..domain.types import JsonDict
from .tensor_io import TensorFormatError, atomic_write_bytes, decode_tensor, encode_tensor

MAGIC = b"TSCK"
VERSION = 1
_M_PREFIX = "adam.m."
_V_PREFIX = "adam.v."


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_entries(entries: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(entries))]
    for name, value in entries.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(encode_tensor(value))
    return b"".join(chunks)


def decode_entries(buffer: bytes) -> Dict[str, np.ndarray]:
    if buffer[:4] != MAGIC:
        raise TensorFormatError("bad_magic", f"magic {bytes(buffer[:4])!r} diverso da {MAGIC!r}")
    if len(buffer) < 9:
        raise TensorFormatError("truncated", "header del checkpoint incompleto", expected=9, actual=len(buffer))
    version, count = struct.unpack_from("<BI", buffer, 4)
    if version != VERSION:
        raise TensorFormatError("bad_version", f"versione di checkpoint {version} non supportata")
    offset = 9
    entries: Dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(buffer) < offset + 2:
            raise TensorFormatError("truncated", "voce incompleta", expected=offset + 2, actual=len(buffer))
        (length,) = struct.unpack_from("<H", buffer, offset)
        offset += 2
        name = bytes(buffer[offset : offset + length]).decode("utf-8")
        offset += length
        if name in entries:
            raise DataPreparationError(f"Voce duplicata '{name}' nel checkpoint.")
        value, consumed = decode_tensor(buffer, offset)
        entries[name] = value
        offset += consumed
    return entries


class FileCheckpointStore(ICheckpointStore):
    def __init__(self, logger: Optional[Union[logging.Logger, logging.LoggerAdapter]] = None):
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def save(
        self,
        path: PathLike,
        params: Mapping[str, np.ndarray],
        meta: JsonDict,
        optimizer: Optional[AdamState] = None,
    ) -> None:
        path = Path(path)
        entries: Dict[str, np.ndarray] = {name: np.asarray(v) for name, v in params.items()}
        sidecar = dict(meta)
        sidecar["optimizer"] = optimizer is not None
        if optimizer is not None:
            for name, value in optimizer.m.items():
                entries[_M_PREFIX + name] = value
            for name, value in optimizer.v.items():
                entries[_V_PREFIX + name] = value
            sidecar["adam"] = {
                "step": optimizer.step,
                "beta1": optimizer.beta1,
                "beta2": optimizer.beta2,
                "eps": optimizer.eps,
            }

        atomic_write_bytes(path, encode_entries(entries))
        atomic_write_bytes(
            sidecar_path(path),
            json.dumps(sidecar, indent=2, sort_keys=True).encode("utf-8"),
        )
        self.logger.debug(f"Checkpoint salvato in {path} ({len(entries)} voci).")

    def load(self, path: PathLike) -> Checkpoint:
        path = Path(path)
        if not path.exists():
            raise MissingDataError(f"Checkpoint non trovato: {path}")
        try:
            entries = decode_entries(path.read_bytes())
            meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise MissingDataError(f"Sidecar del checkpoint mancante: {sidecar_path(path)}") from e
        except (OSError, json.JSONDecodeError) as e:
            raise DataPreparationError(f"Impossibile leggere il checkpoint {path}: {e}") from e

        params = {n: v for n, v in entries.items() if not n.startswith((_M_PREFIX, _V_PREFIX))}
        optimizer = None
        if meta.get("optimizer"):
            adam = meta.get("adam", {})
            optimizer = AdamState(
                m={n[len(_M_PREFIX):]: v for n, v in entries.items() if n.startswith(_M_PREFIX)},
                v={n[len(_V_PREFIX):]: v for n, v in entries.items() if n.startswith(_V_PREFIX)},
                step=int(adam.get("step", 0)),
                beta1=float(adam.get("beta1", ADAM_BETA1)),
                beta2=float(adam.get("beta2", ADAM_BETA2)),
                eps=float(adam.get("eps", ADAM_EPSILON)),
            )
        self.logger.debug(f"Checkpoint caricato da {path} ({len(params)} parametri).")
        return Checkpoint(params=params, meta=meta, optimizer=optimizer)
