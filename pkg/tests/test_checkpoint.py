import numpy as np
import pytest

from gatedcomp.checkpoint import Checkpoint, CheckpointError, checkpoint_load, checkpoint_save, from_bytes, to_bytes
from gatedcomp.curriculum import CurriculumState, EvalPoint, StageConfig, StageKind
from gatedcomp.policy import PolicyParams


def make():
    params = PolicyParams(["a", "b", "c"], [0.1, -2.5, 3.0], [8.0, 9.25, 7.5], [7.0, 8.0, -100.0], 0.35)
    params.skill = 0.123456789
    cur = CurriculumState((StageConfig(StageKind.ACCURACY, 4, 2), StageConfig(StageKind.COMPRESSION, 8, 2)))
    cur.record_eval(EvalPoint(2, 55.25, 1234.5))
    return Checkpoint(params, cur, 17, "ab" * 32, {"metrics_offset": 100, "grad_norms": [1.5, 2.0]})


def test_round_trip_is_identity(tmp_path):
    c = make()
    checkpoint_save(c, tmp_path / "c.bin")
    back = checkpoint_load(tmp_path / "c.bin", "ab" * 32)
    assert back == c
    assert back.params.logit.tobytes() == c.params.logit.tobytes()
    assert to_bytes(back) == to_bytes(c)


def test_inequality_detected():
    a, b = make(), make()
    b.params.log_length[1] = np.nextafter(b.params.log_length[1], 0)
    assert a != b


def test_corrupted_file_rejected(tmp_path):
    data = bytearray(to_bytes(make()))
    data[len(data) // 2] ^= 0xFF
    (tmp_path / "c.bin").write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        checkpoint_load(tmp_path / "c.bin")
    with pytest.raises(CheckpointError):
        from_bytes(bytes(data[:20]))
    with pytest.raises(CheckpointError, match="magic|not a checkpoint"):
        from_bytes(b"XXXXXX" + bytes(data[6:]))


def test_hash_mismatch_refused(tmp_path):
    checkpoint_save(make(), tmp_path / "c.bin")
    with pytest.raises(CheckpointError, match="config"):
        checkpoint_load(tmp_path / "c.bin", "cd" * 32)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint_load(tmp_path / "nope.bin")
