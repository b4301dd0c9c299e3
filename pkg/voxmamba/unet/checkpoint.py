"""Conteneur de checkpoint little-endian.

Disposition :
    magic "VXCK" | version u16 | meta_len u32 | meta (JSON UTF-8)
    | count u32 | count × entrée
Entrée :
    name_len u16 | name (UTF-8) | dtype u8 {0: f32, 1: f64} | rank u8
    | dims u32 × rank | données brutes, dernier axe le plus rapide
Les moments de l'optimiseur sont rangés sous « optim.m.<nom> » et « optim.v.<nom> ».
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from voxmamba.errors import FormatError
from voxmamba.unet.optim import OptimizerState

logger = logging.getLogger(__name__)

MAGIC = b"VXCK"
VERSION = 1
DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
TAG_OF = {np.dtype("float32"): 0, np.dtype("float64"): 1}

M_PREFIX = "optim.m."
V_PREFIX = "optim.v."


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.blob):
            raise FormatError(
                f"checkpoint tronqué en lisant {what}",
                offset=self.offset, expected=f"{size} octets", actual=f"{len(self.blob) - self.offset} octets",
            )
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))


def encode_checkpoint(tensors: dict, meta: dict) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        tag = TAG_OF.get(array.dtype)
        if tag is None:
            array = array.astype(np.float64)
            tag = 1
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", tag, array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes):
    reader = _Reader(blob)
    magic = reader.take(4, "la signature")
    if magic != MAGIC:
        raise FormatError("signature de checkpoint invalide", offset=0, expected=MAGIC, actual=magic)
    version_offset = reader.offset
    version, meta_len = reader.unpack("HI", "l'en-tête")
    if version != VERSION:
        raise FormatError("version de checkpoint non supportée", offset=version_offset, expected=VERSION, actual=version)
    meta = json.loads(reader.take(meta_len, "les métadonnées").decode("utf-8"))
    (count,) = reader.unpack("I", "le nombre d'entrées")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("H", "la longueur du nom")
        name = reader.take(name_len, "le nom").decode("utf-8")
        tag_offset = reader.offset
        tag, rank = reader.unpack("BB", f"le type de {name}")
        if tag not in DTYPE_TAGS:
            raise FormatError(f"type inconnu pour {name}", offset=tag_offset, expected=sorted(DTYPE_TAGS), actual=tag)
        dims = reader.unpack(f"{rank}I", f"les dimensions de {name}")
        dtype = DTYPE_TAGS[tag]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        payload = reader.take(size, f"les données de {name}")
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    if reader.offset != len(blob):
        raise FormatError(
            "octets excédentaires en fin de checkpoint",
            offset=reader.offset, expected=reader.offset, actual=len(blob),
        )
    return tensors, meta


def save_checkpoint(path, model, optimizer: OptimizerState = None, meta: dict = None) -> Path:
    path = Path(path)
    tensors = dict(model.state_dict())
    meta = dict(meta or {})
    if optimizer is not None:
        meta["optimizer"] = optimizer.settings()
        meta["optimizer_step"] = optimizer.step
        for name, m in optimizer.m.items():
            tensors[M_PREFIX + name] = m
        for name, v in optimizer.v.items():
            tensors[V_PREFIX + name] = v
    blob = encode_checkpoint(tensors, meta)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    logger.debug("Checkpoint écrit: %s (%d tenseurs, %d octets)", path, len(tensors), len(blob))
    return path


def load_checkpoint(path):
    """Retourne (poids du modèle, métadonnées, état de l'optimiseur ou None)"""
    tensors, meta = decode_checkpoint(Path(path).read_bytes())
    weights = {k: v for k, v in tensors.items() if not k.startswith((M_PREFIX, V_PREFIX))}
    optimizer = None
    if "optimizer" in meta:
        optimizer = OptimizerState(**meta["optimizer"])
        optimizer.step = int(meta.get("optimizer_step", 0))
        optimizer.m = {k[len(M_PREFIX):]: v for k, v in tensors.items() if k.startswith(M_PREFIX)}
        optimizer.v = {k[len(V_PREFIX):]: v for k, v in tensors.items() if k.startswith(V_PREFIX)}
    return weights, meta, optimizer
