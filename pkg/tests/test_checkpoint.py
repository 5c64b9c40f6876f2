import struct

import numpy as np
import pytest

from rescaps import checkpoint as CK
from rescaps.model import ArchitectureConfig, init_params, parameter_shapes
from rescaps.verify import DESK_ARCH


@pytest.fixture
def params():
    return init_params(DESK_ARCH, 11)


def test_save_load_save_is_byte_identical(tmp_path, params):
    a, b = tmp_path / "a.rcap", tmp_path / "b.rcap"
    CK.checkpoint_save(params, DESK_ARCH, a, seed=11, meta={"epoch": "3"})
    ck = CK.checkpoint_load(a)
    assert ck.config == DESK_ARCH and ck.seed == 11 and ck.meta == {"epoch": "3"}
    assert list(ck.params) == list(params)
    for k in params:
        assert ck.params[k].data.tobytes() == params[k].data.tobytes()
    CK.checkpoint_save(ck.params, ck.config, b, seed=ck.seed, meta=ck.meta)
    assert a.read_bytes() == b.read_bytes()


def test_header_layout(params):
    buf = CK.encode(params, DESK_ARCH, seed=2)
    assert buf[:4] == b"RCAP"
    version, text_len = struct.unpack("<II", buf[4:12])
    assert version == 1
    assert buf[12:12 + text_len].decode().startswith("seed = 2\n")


def test_extras_round_trip(params):
    extra = {"m.primary.weight": np.arange(6.0).reshape(2, 3)}
    ck = CK.decode(CK.encode(params, DESK_ARCH, extras=extra))
    np.testing.assert_array_equal(ck.extras["m.primary.weight"], extra["m.primary.weight"])


def test_bad_magic(params):
    buf = b"XCAP" + CK.encode(params, DESK_ARCH)[4:]
    with pytest.raises(CK.CheckpointError, match="magic"):
        CK.decode(buf)


def test_bad_version(params):
    buf = bytearray(CK.encode(params, DESK_ARCH))
    buf[4:8] = struct.pack("<I", 9)
    with pytest.raises(CK.CheckpointError, match="version"):
        CK.decode(bytes(buf))


@pytest.mark.parametrize("cut", [3, 10, 40, -1])
def test_truncation(params, cut):
    buf = CK.encode(params, DESK_ARCH)
    with pytest.raises(CK.CheckpointError, match="truncated"):
        CK.decode(buf[:cut])


def test_dims_mismatch_names_tensor(params):
    bad = dict(params)
    bad["primary.bias"] = type(params["primary.bias"])(np.zeros(5))
    with pytest.raises(CK.CheckpointError, match="primary.bias"):
        CK.decode(CK.encode(bad, DESK_ARCH))


def test_missing_and_unexpected_tensors(params):
    fewer = {k: v for k, v in params.items() if k != "routing.primary.weight"}
    with pytest.raises(CK.CheckpointError, match="missing parameter routing.primary.weight"):
        CK.decode(CK.encode(fewer, DESK_ARCH))
    more = dict(params)
    more["stray"] = params["primary.bias"]
    with pytest.raises(CK.CheckpointError, match="unexpected tensor stray"):
        CK.decode(CK.encode(more, DESK_ARCH))


def test_architecture_mismatch(params):
    other = ArchitectureConfig(input_height=32, input_width=32, conv_channels=(8, 16, 16, 16),
                               primary_channels=8, intermediate_caps=4)
    assert dict(parameter_shapes(other)) != dict(parameter_shapes(DESK_ARCH))
    with pytest.raises(CK.CheckpointError):
        CK.decode(CK.encode(params, other))


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        CK.checkpoint_load(tmp_path / "nope.rcap")
