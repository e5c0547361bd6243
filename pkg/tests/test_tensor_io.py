import json
import struct

import numpy as np
import pytest
from PIL import Image

from errors import DataError
from tensor_io import (CHECKPOINT_MAGIC, MAGIC, decode_tensor, encode_tensor, load_checkpoint, read_tensor,
                       read_tensor_stream, save_checkpoint, write_pgm, write_tensor, write_tensor_stream)


def test_cdt1_layout():
    array = np.arange(6, dtype=np.float64).reshape(2, 3)
    blob = encode_tensor(array)
    assert blob[:4] == MAGIC
    assert struct.unpack_from('<3I', blob, 4) == (2, 2, 3)
    assert len(blob) == 4 + 4 + 8 + 6 * 8
    assert struct.unpack_from('<d', blob, 16)[0] == 0.0
    assert struct.unpack_from('<d', blob, 16 + 5 * 8)[0] == 5.0


def test_scalar_and_file_round_trip(tmp_path):
    decoded, end = decode_tensor(encode_tensor(np.float64(2.5)))
    assert decoded.shape == () and decoded == 2.5 and end == 16
    array = np.random.default_rng(0).normal(size=(3, 4, 5))
    write_tensor(tmp_path / "a.cdt", array)
    assert np.array_equal(read_tensor(tmp_path / "a.cdt"), array)


def test_truncated_or_foreign_blobs():
    blob = encode_tensor(np.ones((2, 2)))
    with pytest.raises(DataError):
        decode_tensor(blob[:-1])
    with pytest.raises(DataError):
        decode_tensor(b"XXXX" + blob[4:])


def test_stream_offsets(tmp_path):
    arrays = [np.ones((3,)), np.zeros((2, 2)), np.full((1, 1, 2), 7.0)]
    offsets = write_tensor_stream(tmp_path / "s.bin", arrays)
    sizes = [len(encode_tensor(a)) for a in arrays]
    assert offsets == [0, sizes[0], sizes[0] + sizes[1]]
    buffer = (tmp_path / "s.bin").read_bytes()
    assert np.array_equal(decode_tensor(buffer, offsets[2])[0], arrays[2])
    assert all(np.array_equal(a, b) for a, b in zip(read_tensor_stream(tmp_path / "s.bin"), arrays))


def test_checkpoint_round_trip(tmp_path):
    tensors = {"b.w": np.arange(4.0).reshape(2, 2), "a.b": np.zeros(3)}
    save_checkpoint(tmp_path / "m.cdck", tensors, {"step": 3, "kind": "cdal"})
    loaded, metadata = load_checkpoint(tmp_path / "m.cdck")
    assert list(loaded) == ["b.w", "a.b"]
    assert all(np.array_equal(loaded[k], tensors[k]) for k in tensors)
    assert metadata == {"step": 3, "kind": "cdal"}

    buffer = (tmp_path / "m.cdck").read_bytes()
    assert buffer[:4] == CHECKPOINT_MAGIC
    version, index_len = struct.unpack_from('<IQ', buffer, 4)
    index = json.loads(buffer[16:16 + index_len])
    assert version == 1 and index["version"] == 1
    assert index["tensors"]["b.w"]["offset"] == 0


def test_checkpoint_errors(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "absent.cdck")
    (tmp_path / "foreign.cdck").write_bytes(b"JUNK" + bytes(20))
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "foreign.cdck")
    save_checkpoint(tmp_path / "m.cdck", {"w": np.ones(2)}, {})
    buffer = bytearray((tmp_path / "m.cdck").read_bytes())
    struct.pack_into('<I', buffer, 4, 2)
    (tmp_path / "future.cdck").write_bytes(bytes(buffer))
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "future.cdck")


def test_pgm_preview(tmp_path):
    array = np.array([[0.2, 0.4], [0.6, 1.0]])
    write_pgm(tmp_path / "m.pgm", array)
    assert (tmp_path / "m.pgm").read_bytes()[:2] == b"P5"
    pixels = np.asarray(Image.open(tmp_path / "m.pgm"))
    assert pixels.shape == (2, 2)
    assert pixels.min() == 0 and pixels.max() == 255
    write_pgm(tmp_path / "flat.pgm", np.full((2, 2), 3.0))
    assert np.asarray(Image.open(tmp_path / "flat.pgm")).max() == 0
