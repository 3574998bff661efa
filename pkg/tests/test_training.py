import numpy as np
import pytest

from stageflow.datasets import DatasetSpec
from stageflow.errors import CheckpointVersionError, CorruptCheckpointError, InvalidArgumentError
from stageflow.models import MlpSpec
from stageflow.numerics import Layer, ParamStore, RngStream, finite_diff_check, init_params
from stageflow.training import (
    CfmBatch,
    TrainConfig,
    cfm_loss_and_grads,
    draw_batch,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_trace,
    zero_model_loss,
)

SMALL = MlpSpec.for_latent(2, [8], 8)
QUICK = TrainConfig(steps=30, batch_size=32, eval_every=10, seed=4)


def test_exact_model_has_zero_loss():
    # linear net reading z_t; with t = 0 and z1 = 2 z0 the target z1 - z0 equals z_t
    spec = MlpSpec.for_latent(2, [], 0)
    w = np.zeros((2, spec.input_dim))
    w[0, 0] = w[1, 1] = 1.0
    params = ParamStore([Layer(w, np.zeros(2))])
    z0 = RngStream(0).normal((16, 2))
    batch = CfmBatch(z0, 2 * z0, np.zeros(16), -np.ones(16, dtype=int))
    loss, _ = cfm_loss_and_grads(params, spec, batch)
    assert loss == 0.0


def test_zero_model_single_element():
    params = init_params(SMALL.dims, RngStream(0)).zeros_like()
    for t in (0.0, 0.37, 1.0):
        batch = CfmBatch(np.zeros((1, 2)), np.array([[3.0, 4.0]]), np.array([t]), np.array([2]))
        assert cfm_loss_and_grads(params, SMALL, batch)[0] == 25.0
        assert zero_model_loss(batch) == 25.0


def test_gradients_vs_finite_differences():
    params = init_params(MlpSpec.for_latent(2, [10, 6], 8).dims, RngStream(1))
    spec = MlpSpec.for_latent(2, [10, 6], 8)
    batch = draw_batch(DatasetSpec(), RngStream(2), 12, 0.3)
    assert finite_diff_check(lambda p: cfm_loss_and_grads(p, spec, batch), params, 1e-5) < 1e-4


def test_loss_nonnegative():
    params = init_params(SMALL.dims, RngStream(3))
    for s in range(5):
        assert cfm_loss_and_grads(params, SMALL, draw_batch(DatasetSpec(), RngStream(s), 8, 0.1))[0] >= 0


def test_zero_steps_rejected():
    with pytest.raises(InvalidArgumentError):
        train(SMALL, DatasetSpec(), TrainConfig(steps=0))


def test_deterministic_checkpoints(tmp_path):
    a = save_checkpoint(train(SMALL, DatasetSpec(), QUICK), tmp_path / "a.ckpt")
    b = save_checkpoint(train(SMALL, DatasetSpec(), QUICK), tmp_path / "b.ckpt")
    assert a.read_bytes() == b.read_bytes()


def test_trace_layout(tmp_path):
    ckpt = train(SMALL, DatasetSpec(), QUICK)
    assert [row[0] for row in ckpt.loss_trace] == [0, 10, 20, 30]
    lines = write_loss_trace(ckpt.loss_trace, tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,train_loss,heldout_loss" and len(lines) == 5


def test_checkpoint_roundtrip(tmp_path):
    ckpt = train(SMALL, DatasetSpec(), QUICK)
    back = load_checkpoint(save_checkpoint(ckpt, tmp_path / "c.ckpt"))
    assert all(np.array_equal(x, y) for x, y in zip(ckpt.params.arrays(), back.params.arrays()))
    assert back.spec == ckpt.spec and back.train_config == ckpt.train_config
    assert back.dataset_spec == ckpt.dataset_spec
    assert back.final_train_loss == ckpt.final_train_loss
    assert np.array_equal(np.array(back.loss_trace), np.array(ckpt.loss_trace), equal_nan=True)


def test_version_999(tmp_path):
    path = save_checkpoint(train(SMALL, DatasetSpec(), QUICK), tmp_path / "c.ckpt")
    data = bytearray(path.read_bytes())
    data[4:8] = (999).to_bytes(4, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


@pytest.mark.parametrize("keep", [3, 40, -10])
def test_truncated(tmp_path, keep):
    path = save_checkpoint(train(SMALL, DatasetSpec(), QUICK), tmp_path / "c.ckpt")
    path.write_bytes(path.read_bytes()[:keep])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_bit_flip_detected(tmp_path):
    path = save_checkpoint(train(SMALL, DatasetSpec(), QUICK), tmp_path / "c.ckpt")
    data = bytearray(path.read_bytes())
    data[-20] ^= 1
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)
