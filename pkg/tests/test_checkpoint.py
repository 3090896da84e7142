import struct

import numpy as np
import pytest

from vvpit.checkpoint import Checkpoint, CheckpointError, decode, encode, load_checkpoint, save_checkpoint
from vvpit.vnn import init_vfgn


@pytest.fixture
def ckpt():
    return Checkpoint.from_params(init_vfgn((3, 4, 5), seed=2), step=123, running_loss=0.25)


def test_round_trip_is_bit_exact_in_float32(tmp_path, ckpt):
    path = tmp_path / "c.vvpt"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.step == 123 and back.running_loss == 0.25 and back.version == 1
    assert [n for n, _ in back.tensors] == [n for n, _ in ckpt.tensors]
    for (_, a), (_, b) in zip(ckpt.tensors, back.tensors):
        assert a.astype("<f4").tobytes() == b.tobytes()
    # re-encoding the loaded checkpoint reproduces the file byte for byte
    assert encode(back) == path.read_bytes()


def test_layout(ckpt):
    buf = encode(ckpt)
    assert buf[:4] == b"VVPT"
    version, count = struct.unpack("<II", buf[4:12])
    assert version == 1 and count == len(ckpt.tensors)
    (nlen,) = struct.unpack("<H", buf[12:14])
    assert buf[14:14 + nlen] == b"layer0.mean_kernel"
    step, loss = struct.unpack("<Qf", buf[-12:])
    assert step == 123 and loss == 0.25


def test_params_rebuild(ckpt):
    p = ckpt.params()
    assert [t.shape for t in p.parameters()] == [a.shape for _, a in ckpt.tensors]
    assert p.layers[0].padding == 1


@pytest.mark.parametrize("corrupt, msg", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], "version"),
    (lambda b: b[:-5], "truncated"),
    (lambda b: b + b"\0", "trailing"),
    # rank byte of the first tensor sits after the 12-byte header and its 2 + 18 byte name
    (lambda b: b[:32] + struct.pack("<B4I", 4, 9999, 9999, 9, 9) + b[49:], "overflows"),
])
def test_corrupt_files_are_rejected(ckpt, corrupt, msg):
    with pytest.raises(CheckpointError, match=msg):
        decode(corrupt(encode(ckpt)))


def test_bad_utf8_name(ckpt):
    buf = bytearray(encode(ckpt))
    buf[14] = 0xFF
    with pytest.raises(CheckpointError, match="UTF-8"):
        decode(bytes(buf))


def test_failed_load_leaves_nothing_behind(tmp_path, ckpt):
    path = tmp_path / "bad.vvpt"
    path.write_bytes(b"NOPE" + encode(ckpt)[4:])
    result = None
    with pytest.raises(CheckpointError):
        result = load_checkpoint(path)
    assert result is None


def test_rank_zero_tensors(tmp_path):
    c = Checkpoint([("s", np.asarray(2.5, dtype=np.float32))], 0, 0.0)
    back = decode(encode(c))
    assert back.tensors[0][1].shape == () and float(back.tensors[0][1]) == 2.5


def test_reference_fixture_reproduces_recorded_loss(reference):
    from fixtures.make_reference import fixture_loss
    rec = reference["record"]
    loss = fixture_loss(reference["checkpoint"], reference["cfg"], reference["train"])
    assert abs(loss - rec["loss"]) <= 1e-5
    assert reference["checkpoint"].step == reference["cfg"]["steps"]
