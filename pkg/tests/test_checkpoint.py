import numpy as np
import pytest

from lotenet.checkpoint import CheckpointError, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from lotenet.config import RunConfig
from lotenet.model import forward_batch, init_model
from lotenet.tensor_core import NARROW, WIDE


def _model(precision, shared=False):
    run = RunConfig(input="16x16x1", layers=2, beta=3, precision=precision, shared=shared)
    dtype = NARROW if precision == "narrow" else WIDE
    return run, init_model(run.model_config(), seed=5, dtype=dtype, noise=0.2)


@pytest.mark.parametrize("shared", [False, True])
def test_round_trip_bit_identical_narrow(tmp_path, shared):
    run, model = _model("narrow", shared)
    save_checkpoint(tmp_path / "m.ltnc", run, model, {"epoch": 3})
    ck = load_checkpoint(tmp_path / "m.ltnc")
    assert ck.run == run and ck.meta == {"epoch": 3}
    images = np.random.default_rng(0).uniform(size=(5, 16, 16, 1))
    a = forward_batch(model, images).data
    b = forward_batch(ck.model, images).data
    assert a.dtype == b.dtype == np.float32
    assert a.tobytes() == b.tobytes()


def test_wide_round_trip_exact_for_float32_values(tmp_path):
    run, model = _model("wide")
    model = model.with_parameters([p.data.astype(np.float32) for p in model.parameters()])
    save_checkpoint(tmp_path / "m.ltnc", run, model)
    ck = load_checkpoint(tmp_path / "m.ltnc")
    images = np.random.default_rng(1).uniform(size=(3, 16, 16, 1))
    assert forward_batch(model, images).data.tobytes() == forward_batch(ck.model, images).data.tobytes()


def test_layout_header():
    run, model = _model("narrow")
    raw = to_bytes(run, model, {})
    assert raw[:4] == b"LTNC"
    assert int.from_bytes(raw[4:8], "little") == 1
    n = int.from_bytes(raw[8:12], "little")
    assert raw[12:12 + n].decode("utf-8") == run.to_text()
    count = int.from_bytes(raw[12 + n:16 + n], "little")
    assert count == len(model.parameters())
    assert raw[16 + n:20 + n] == b"LTT1"
    assert raw.endswith(b"{}")


def test_corruption_detected():
    run, model = _model("narrow")
    raw = to_bytes(run, model, {"epoch": 1})
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        from_bytes(raw[:-5])
    with pytest.raises(CheckpointError, match="trailing"):
        from_bytes(raw + b"\x00")
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
