import struct

import numpy as np
import pytest

from modules.tensor_io import TensorFormatError, decode_tensor, encode_tensor, read_tensor, write_tensor


def test_file_round_trip_is_bit_identical(tmp_path):
    value = np.random.default_rng(0).standard_normal((3, 4, 2)).astype(np.float32)
    path = write_tensor(tmp_path / "nested" / "value.icbt", value)
    loaded = read_tensor(path)
    assert loaded.shape == (3, 4, 2)
    assert loaded.tobytes() == value.tobytes()


def test_header_layout():
    payload = encode_tensor(np.zeros((2, 3), dtype=np.float32))
    assert payload[:4] == b"ICBT"
    assert payload[4:7] == bytes([1, 0, 2])
    assert struct.unpack("<QQ", payload[7:23]) == (2, 3)
    assert len(payload) == 23 + 6 * 4


def test_encoding_is_deterministic():
    value = np.arange(12, dtype=np.float32).reshape(3, 4)
    assert encode_tensor(value) == encode_tensor(value.copy())


def test_bad_magic():
    payload = b"XXXX" + encode_tensor(np.zeros(2))[4:]
    with pytest.raises(TensorFormatError, match="magic"):
        decode_tensor(payload)


def test_unsupported_version_and_dtype():
    payload = bytearray(encode_tensor(np.zeros(2)))
    payload[4] = 2
    with pytest.raises(TensorFormatError, match="version"):
        decode_tensor(bytes(payload))
    payload[4], payload[5] = 1, 1
    with pytest.raises(TensorFormatError, match="dtype"):
        decode_tensor(bytes(payload))


def test_truncated_and_oversized_payloads():
    payload = encode_tensor(np.ones((4, 4)))
    with pytest.raises(TensorFormatError):
        decode_tensor(payload[:-1])
    with pytest.raises(TensorFormatError):
        decode_tensor(payload + b"\x00")
    with pytest.raises(TensorFormatError):
        decode_tensor(payload[:5])


def test_huge_declared_dims_do_not_wrap_to_an_empty_payload():
    header_only = b"ICBT" + bytes([1, 0, 2]) + struct.pack("<QQ", 2**62, 4)
    with pytest.raises(TensorFormatError, match="payload"):
        decode_tensor(header_only)


def test_missing_file_is_an_os_error(tmp_path):
    with pytest.raises(OSError):
        read_tensor(tmp_path / "absent.icbt")
