"""Format de volume binaire ``.vxm`` (little-endian).

    magic "VXM1" | version u16 | dtype u8 {0: f32, 1: u8} | rank u32
    | dims u32 × rank | spacing u8 (0/1) [+ 3 × f64] | données, dernier axe le plus rapide
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from voxmamba.errors import ConfigurationError, FormatError
from voxmamba.metrics.seg import LabelVolume

logger = logging.getLogger(__name__)

MAGIC = b"VXM1"
VERSION = 1
EXTENSION = ".vxm"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
DTYPE_NAMES = {0: "f32", 1: "u8"}
TAG_OF = {"f32": 0, "u8": 1}


@dataclass
class VolumeRecord:
    data: np.ndarray
    spacing: tuple = None

    @property
    def dtype_name(self) -> str:
        return "u8" if self.data.dtype == np.uint8 else "f32"


def _as_record(volume, spacing=None) -> VolumeRecord:
    if isinstance(volume, VolumeRecord):
        return volume
    if isinstance(volume, LabelVolume):
        return VolumeRecord(np.asarray(volume.labels, dtype=np.uint8), spacing or volume.spacing)
    data = np.asarray(getattr(volume, "data", volume))
    if data.dtype.kind in "iub":
        if data.size and (data.min() < 0 or data.max() > 255):
            raise ConfigurationError(f"étiquettes hors de la plage u8: [{data.min()}, {data.max()}]")
        data = data.astype(np.uint8)
    elif data.dtype != np.float32:
        data = data.astype(np.float32)
    return VolumeRecord(data, spacing)


def encode_volume(volume, spacing=None) -> bytes:
    record = _as_record(volume, spacing)
    tag = TAG_OF[record.dtype_name]
    data = record.data
    parts = [
        MAGIC,
        struct.pack("<HBI", VERSION, tag, data.ndim),
        struct.pack(f"<{data.ndim}I", *data.shape),
    ]
    if record.spacing is not None:
        parts.append(struct.pack("<B3d", 1, *record.spacing))
    else:
        parts.append(struct.pack("<B", 0))
    parts.append(np.ascontiguousarray(data, dtype=DTYPES[tag]).tobytes())
    return b"".join(parts)


def decode_volume(blob: bytes, expected_dtype: str = None) -> VolumeRecord:
    offset = 0

    def take(size: int, what: str) -> bytes:
        nonlocal offset
        if offset + size > len(blob):
            raise FormatError(
                f"fichier tronqué en lisant {what}",
                offset=offset, expected=f"{size} octets", actual=f"{len(blob) - offset} octets",
            )
        chunk = blob[offset:offset + size]
        offset += size
        return chunk

    magic = take(4, "la signature")
    if magic != MAGIC:
        raise FormatError("signature invalide", offset=0, expected=MAGIC, actual=magic)
    version, tag, rank = struct.unpack("<HBI", take(7, "l'en-tête"))
    if version != VERSION:
        raise FormatError("version non supportée", offset=4, expected=VERSION, actual=version)
    if tag not in DTYPES:
        raise FormatError("type de données inconnu", offset=6, expected=sorted(DTYPES), actual=tag)
    if expected_dtype is not None and DTYPE_NAMES[tag] != expected_dtype:
        raise FormatError("type de données inattendu", offset=6, expected=expected_dtype, actual=DTYPE_NAMES[tag])
    dims = struct.unpack(f"<{rank}I", take(4 * rank, "les dimensions"))
    (has_spacing,) = struct.unpack("<B", take(1, "l'indicateur d'espacement"))
    spacing = None
    if has_spacing:
        spacing = struct.unpack("<3d", take(24, "l'espacement"))
    dtype = DTYPES[tag]
    size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload_offset = offset
    if len(blob) - payload_offset != size:
        raise FormatError(
            "taille des données incohérente",
            offset=payload_offset, expected=f"{size} octets", actual=f"{len(blob) - payload_offset} octets",
        )
    data = np.frombuffer(take(size, "les données"), dtype=dtype).reshape(dims)
    return VolumeRecord(data.astype(dtype.newbyteorder("=")), spacing)


def write_volume(path, volume, spacing=None) -> Path:
    path = Path(path)
    path.write_bytes(encode_volume(volume, spacing))
    return path


def read_volume(path, expected_dtype: str = None) -> VolumeRecord:
    path = Path(path)
    record = decode_volume(path.read_bytes(), expected_dtype)
    logger.debug("Volume lu: %s %s %s", path, record.data.shape, record.dtype_name)
    return record


def read_labels(path, classes: int = None) -> LabelVolume:
    record = read_volume(path, expected_dtype="u8")
    return LabelVolume(record.data, spacing=record.spacing, classes=classes)


def read_image(path) -> VolumeRecord:
    return read_volume(path, expected_dtype="f32")
