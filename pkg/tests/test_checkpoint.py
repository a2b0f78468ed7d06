import numpy as np
import pytest

from mriprime.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint


def _write(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a.weight": rng.standard_normal((2, 3, 3, 3)).astype(np.float32), "a.bias": np.zeros(2, np.float32)}
    state = {k: np.abs(v) for k, v in params.items()}
    path = save_checkpoint(tmp_path / "m.ckpt", params, config={"unet": {"depth": 1}}, seed=7, epoch=3,
                           optimizer={"lr": 0.01, "alpha": 0.99}, optimizer_state=state, extra={"note": "x"})
    return path, params, state


def test_round_trip(tmp_path):
    path, params, state = _write(tmp_path)
    header, p2, s2 = load_checkpoint(path)
    assert header["seed"] == 7 and header["epoch"] == 3 and header["config"] == {"unet": {"depth": 1}}
    assert header["optimizer"]["lr"] == 0.01
    assert list(p2) == list(params)
    for k in params:
        np.testing.assert_array_equal(p2[k], params[k])
        np.testing.assert_array_equal(s2[k], state[k])


def test_layout_is_little_endian_float32(tmp_path):
    path, params, state = _write(tmp_path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    hlen = int.from_bytes(raw[8:16], "little")
    body = raw[16 + hlen:]
    expected = b"".join(np.asarray(v, "<f4").tobytes() for v in list(params.values()) + list(state.values()))
    assert body == expected


def test_corruption_detected(tmp_path):
    path, _, _ = _write(tmp_path)
    raw = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    bad.write_bytes(raw[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    bad.write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
