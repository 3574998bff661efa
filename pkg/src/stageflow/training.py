"""Flow-matching training of learned velocity models and checkpoint I/O."""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .datasets import DatasetSpec, sample_target_arrays
from .errors import (
    CheckpointVersionError,
    CorruptCheckpointError,
    InvalidArgumentError,
    NumericError,
    ShapeError,
    TrainingFailure,
)
from .models import TIME_EMBED_DIM, MlpSpec, VelocityModel
from .numerics import AdamState, Layer, ParamStore, RngStream, adam_update, init_params, mlp_backward, mlp_forward

FORMAT_VERSION = 1
MAGIC = b"SFCK"
HELDOUT_SIZE = 4096

# stream ids drawn off TrainConfig.seed
INIT_STREAM, DATA_STREAM, HELDOUT_STREAM = 0, 1, 2


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 6000
    batch_size: int = 256
    lr: float = 1e-3
    cond_drop_prob: float = 0.1
    seed: int = 0
    eval_every: int = 500
    activation: str = "tanh"

    def validate(self) -> "TrainConfig":
        if self.steps < 1:
            raise InvalidArgumentError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.cond_drop_prob <= 1.0:
            raise InvalidArgumentError(f"cond_drop_prob must lie in [0, 1], got {self.cond_drop_prob}")
        if self.eval_every < 1:
            raise InvalidArgumentError(f"eval_every must be >= 1, got {self.eval_every}")
        return self


class CfmBatch(NamedTuple):
    """Arrays for one training batch; ``labels[i] == -1`` marks the unconditional branch."""

    z0: np.ndarray
    z1: np.ndarray
    t: np.ndarray
    labels: np.ndarray


@dataclass
class Checkpoint:
    spec: MlpSpec
    params: ParamStore
    train_config: TrainConfig
    dataset_spec: DatasetSpec
    final_train_loss: float
    format_version: int = FORMAT_VERSION
    loss_trace: list[tuple[int, float, float]] = field(default_factory=list)

    def to_model(self, model_id: str) -> VelocityModel:
        return VelocityModel.learned(model_id, self.spec, self.params)


def _network_input(spec: MlpSpec, zt: np.ndarray, t: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n, d = zt.shape
    x = np.zeros((n, spec.input_dim))
    x[:, :d] = zt
    x[:, d] = t
    x[:, d + 1] = 1.0 - t
    x[:, d + 2] = np.sin(2.0 * np.pi * t)
    x[:, d + 3] = np.cos(2.0 * np.pi * t)
    cond = labels >= 0
    if cond.any():
        if spec.cond_dim < 1 or labels.max() >= spec.cond_dim:
            raise ShapeError(f"labels exceed condition width {spec.cond_dim}")
        x[np.flatnonzero(cond), d + TIME_EMBED_DIM + labels[cond]] = 1.0
    return x


def cfm_loss_and_grads(params: ParamStore, spec: MlpSpec, batch: CfmBatch) -> tuple[float, ParamStore]:
    """Mean squared error between predicted velocity and ``z1 - z0`` on the straight path."""
    z0, z1, t, labels = (np.asarray(a) for a in batch)
    if z0.ndim != 2 or z0.shape[0] == 0:
        raise InvalidArgumentError("batch must be non-empty")
    if z0.shape != z1.shape or t.shape != (z0.shape[0],) or labels.shape != t.shape:
        raise ShapeError("batch arrays disagree in shape")
    if np.any((t < 0) | (t > 1)):
        raise InvalidArgumentError("t values must lie in [0, 1]")
    zt = (1.0 - t)[:, None] * z0 + t[:, None] * z1
    target = z1 - z0
    pred, cache = mlp_forward(params, _network_input(spec, zt, t, labels))
    if not np.isfinite(pred).all():
        raise NumericError("non-finite network output")
    resid = pred - target
    n = z0.shape[0]
    loss = float(np.sum(resid * resid) / n)
    grads, _ = mlp_backward(params, cache, (2.0 / n) * resid)
    return loss, grads


def draw_batch(dataset: DatasetSpec, rng: RngStream, n: int, cond_drop_prob: float) -> CfmBatch:
    z1, labels = sample_target_arrays(dataset, rng, n)
    drop = rng.uniform(n) < cond_drop_prob
    labels = np.where(drop, -1, labels)
    z0 = rng.normal(z1.shape)
    t = rng.uniform(n)
    return CfmBatch(z0, z1, t, labels)


def heldout_batch(dataset: DatasetSpec, config: TrainConfig, n: int = HELDOUT_SIZE) -> CfmBatch:
    return draw_batch(dataset, RngStream(config.seed, HELDOUT_STREAM), n, config.cond_drop_prob)


def zero_model_loss(batch: CfmBatch) -> float:
    """Loss of a model that always predicts zero, i.e. mean ``|z1 - z0|^2``."""
    diff = batch.z1 - batch.z0
    return float(np.mean(np.sum(diff * diff, axis=1)))


def train(spec: MlpSpec, dataset: DatasetSpec, config: TrainConfig) -> Checkpoint:
    """Adam on the flow-matching loss; returns the final parameters and a loss trace.

    The trace holds ``(step, mean train loss since previous row, held-out loss)``
    with a row at step 0 and every ``eval_every`` steps.
    """
    config.validate()
    dataset.validate()
    if spec.cond_dim < dataset.num_classes:
        raise InvalidArgumentError(f"spec condition width {spec.cond_dim} < dataset classes {dataset.num_classes}")
    params = init_params(spec.dims, RngStream(config.seed, INIT_STREAM), config.activation)
    state = AdamState.for_params(params, lr=config.lr)
    data_rng = RngStream(config.seed, DATA_STREAM)
    held = heldout_batch(dataset, config)

    def heldout_loss(p: ParamStore) -> float:
        return cfm_loss_and_grads(p, spec, held)[0]

    trace = [(0, float("nan"), heldout_loss(params))]
    window: list[float] = []
    loss = float("nan")
    for step in range(1, config.steps + 1):
        batch = draw_batch(dataset, data_rng, config.batch_size, config.cond_drop_prob)
        try:
            loss, grads = cfm_loss_and_grads(params, spec, batch)
            if not np.isfinite(loss):
                raise NumericError(f"loss is {loss}")
            params, state = adam_update(state, params, grads)
        except NumericError as exc:
            raise TrainingFailure(step, str(exc)) from exc
        window.append(loss)
        if step % config.eval_every == 0 or step == config.steps:
            trace.append((step, float(np.mean(window)), heldout_loss(params)))
            window = []
    return Checkpoint(spec, params, config, dataset, float(loss), FORMAT_VERSION, trace)


def write_loss_trace(trace, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "train_loss", "heldout_loss"])
        for step, tr, ho in trace:
            w.writerow([step, "" if np.isnan(tr) else repr(tr), repr(ho)])
    return path


# Checkpoint layout (all little-endian):
#   4s magic | u32 version | u32 header length | JSON header | f64 parameters | u32 crc32 of everything before
def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    header = {
        "spec": {"input_dim": ckpt.spec.input_dim, "hidden_widths": list(ckpt.spec.hidden_widths),
                 "output_dim": ckpt.spec.output_dim},
        "activation": ckpt.params.activation,
        "dims": ckpt.params.dims,
        "train_config": asdict(ckpt.train_config),
        "dataset_spec": asdict(ckpt.dataset_spec),
        # floats travel as IEEE-754 hex so the roundtrip is bit exact
        "final_train_loss": float(ckpt.final_train_loss).hex(),
        "loss_trace": [[s, float(a).hex(), float(b).hex()] for s, a, b in ckpt.loss_trace],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in ckpt.params.arrays())
    payload = MAGIC + struct.pack("<II", ckpt.format_version, len(blob)) + blob + body
    path.write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))
    return path


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file or truncated header")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
    if len(data) < 12 + hlen + 4:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[12 : 12 + hlen])
    except ValueError as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header") from exc
    dims = header["dims"]
    n_floats = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    end = 12 + hlen + 8 * n_floats
    if len(data) != end + 4:
        raise CorruptCheckpointError(f"{path}: expected {end + 4} bytes, found {len(data)}")
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    flat = np.frombuffer(data, dtype="<f8", count=n_floats, offset=12 + hlen).astype(np.float64)
    layers, pos = [], 0
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        w = flat[pos : pos + n_in * n_out].reshape(n_out, n_in)
        pos += n_in * n_out
        b = flat[pos : pos + n_out]
        pos += n_out
        layers.append(Layer(w.copy(), b.copy()))
    spec = MlpSpec(**header["spec"])
    return Checkpoint(
        spec=spec,
        params=ParamStore(layers, header["activation"]),
        train_config=TrainConfig(**header["train_config"]),
        dataset_spec=DatasetSpec(**header["dataset_spec"]),
        final_train_loss=float.fromhex(header["final_train_loss"]),
        format_version=version,
        loss_trace=[(int(s), float.fromhex(a), float.fromhex(b)) for s, a, b in header["loss_trace"]],
    )
