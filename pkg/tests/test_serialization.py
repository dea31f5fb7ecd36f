import struct

import numpy as np
import pytest

from mixformer.backbone import build_model
from mixformer.serialization import (
    FormatError,
    decode,
    encode,
    load_model,
    load_tensor,
    load_tensors,
    save_model,
    save_tensor,
)
from mixformer.training import MICRO_MODEL


def test_header_layout():
    blob = encode({"ab": np.array([[1.0, 2.0, 3.0]])})
    assert blob[:4] == b"MIXF"
    assert struct.unpack("<III", blob[4:16]) == (1, 1, 2)
    assert blob[16:18] == b"ab"
    assert struct.unpack("<III", blob[18:30]) == (2, 1, 3)
    assert np.frombuffer(blob[30:], "<f4").tolist() == [1, 2, 3]


def test_roundtrip_to_float32(rng):
    tensors = {"w": rng.normal(size=(2, 3)), "ünïcode.b": rng.normal(size=4), "s": np.array(2.5)}
    out = decode(encode(tensors))
    assert list(out) == list(tensors)
    for name, value in tensors.items():
        assert np.array_equal(out[name], value.astype(np.float32).astype(np.float64))


@pytest.mark.parametrize(
    "blob", [b"MIXG" + bytes(8), b"MIXF" + struct.pack("<II", 2, 0), b"MIXF" + struct.pack("<II", 1, 1) + b"\x05"]
)
def test_bad_files(blob):
    with pytest.raises(FormatError):
        decode(blob)


def test_trailing_bytes():
    with pytest.raises(FormatError):
        decode(encode({}) + b"\x00")


def test_model_roundtrip_byte_identical(tmp_path):
    model = build_model(MICRO_MODEL, seed=0)
    save_model(tmp_path / "a.mixf", model)
    other = build_model(MICRO_MODEL, seed=1)
    load_model(tmp_path / "a.mixf", other)
    save_model(tmp_path / "b.mixf", other)
    assert (tmp_path / "a.mixf").read_bytes() == (tmp_path / "b.mixf").read_bytes()
    names = list(load_tensors(tmp_path / "a.mixf"))
    assert names[: len(model.parameters())] == [n for n, _ in model.named_parameters()]


def test_load_rejects_mismatched_model(tmp_path):
    save_model(tmp_path / "a.mixf", build_model(MICRO_MODEL, seed=0))
    with pytest.raises(KeyError):
        load_model(tmp_path / "a.mixf", build_model("b0", seed=None))


def test_single_tensor(tmp_path, rng):
    x = rng.normal(size=(1, 3, 4, 4))
    save_tensor(tmp_path / "x.mixf", x)
    assert np.allclose(load_tensor(tmp_path / "x.mixf"), x, atol=1e-6)
    save_model(tmp_path / "m.mixf", build_model(MICRO_MODEL, seed=0))
    with pytest.raises(FormatError):
        load_tensor(tmp_path / "m.mixf")
