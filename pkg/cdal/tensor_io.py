"""
Formats binaires : tenseurs CDT1, conteneur de checkpoint, apercus PGM.

CDT1 (little-endian) : magic "CDT1", u32 rang, u32 dims[rang], payload f64 ligne-majeure.
Checkpoint : magic "CDCK", u32 version, u64 taille de l'index, index JSON
(nom -> offset/longueur relatifs a la zone des blobs, plus metadonnees), puis les blobs CDT1.
"""

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from errors import DataError

MAGIC = b"CDT1"
CHECKPOINT_MAGIC = b"CDCK"
CHECKPOINT_VERSION = 1


def encode_tensor(array: np.ndarray) -> bytes:
    """Serialise un tableau en blob CDT1."""
    array = np.asarray(array, dtype='<f8')
    header = MAGIC + struct.pack('<I', array.ndim) + struct.pack(f'<{array.ndim}I', *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def decode_tensor(buffer: bytes, offset: int = 0) -> tuple:
    """
    Lit un blob CDT1 a partir de `offset`.

    Returns:
        (tableau float64, offset juste apres le blob)
    """
    if buffer[offset:offset + 4] != MAGIC:
        raise DataError(f"Blob CDT1 invalide a l'offset {offset}")
    (rank,) = struct.unpack_from('<I', buffer, offset + 4)
    dims = struct.unpack_from(f'<{rank}I', buffer, offset + 8)
    start = offset + 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    end = start + 8 * count
    if end > len(buffer):
        raise DataError("Blob CDT1 tronque")
    array = np.frombuffer(buffer, dtype='<f8', count=count, offset=start).astype(np.float64)
    return array.reshape(dims), end


def write_tensor(path, array: np.ndarray):
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    array, _ = decode_tensor(Path(path).read_bytes())
    return array


def write_tensor_stream(path, arrays) -> list:
    """Concatene des blobs CDT1 ; retourne les offsets de debut de chaque blob."""
    offsets = []
    position = 0
    with open(path, 'wb') as f:
        for array in arrays:
            blob = encode_tensor(array)
            offsets.append(position)
            f.write(blob)
            position += len(blob)
    return offsets


def read_tensor_stream(path) -> list:
    buffer = Path(path).read_bytes()
    arrays, offset = [], 0
    while offset < len(buffer):
        array, offset = decode_tensor(buffer, offset)
        arrays.append(array)
    return arrays


def save_checkpoint(path, tensors: dict, metadata: dict):
    """
    Ecrit un checkpoint : index JSON puis blobs CDT1.

    Args:
        path: Fichier de sortie
        tensors: nom -> tableau numpy (ordre preserve)
        metadata: Informations JSON (configuration, etape, ...)
    """
    blobs, entries, position = [], {}, 0
    for name, array in tensors.items():
        blob = encode_tensor(array)
        entries[name] = {"offset": position, "length": len(blob)}
        blobs.append(blob)
        position += len(blob)
    index = json.dumps({"version": CHECKPOINT_VERSION, "tensors": entries, "metadata": metadata}).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC + struct.pack('<IQ', CHECKPOINT_VERSION, len(index)))
        f.write(index)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple:
    """
    Lit un checkpoint.

    Returns:
        (dict nom -> tableau, metadata)
    """
    try:
        buffer = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"Checkpoint introuvable: {path}")
    if buffer[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"Fichier non reconnu comme checkpoint: {path}")
    version, index_len = struct.unpack_from('<IQ', buffer, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"Version de checkpoint {version} non supportee (attendu {CHECKPOINT_VERSION})")
    header_end = 16 + index_len
    index = json.loads(buffer[16:header_end].decode('utf-8'))
    tensors = {}
    for name, entry in index["tensors"].items():
        array, end = decode_tensor(buffer, header_end + entry["offset"])
        if end - (header_end + entry["offset"]) != entry["length"]:
            raise DataError(f"Longueur incoherente pour {name}")
        tensors[name] = array
    return tensors, index.get("metadata", {})


def write_pgm(path, array: np.ndarray):
    """Ecrit une carte 2D en PGM 8 bits, normalisee min-max."""
    array = np.asarray(array, dtype=np.float64)
    low, high = float(array.min()), float(array.max())
    if high > low:
        scaled = (array - low) / (high - low)
    else:
        scaled = np.zeros_like(array)
    pixels = np.round(scaled * 255).astype(np.uint8)
    Image.fromarray(pixels).save(str(path), format='PPM')
