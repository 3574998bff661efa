import numpy as np
import pytest

from stageflow.datasets import DatasetSpec
from stageflow.models import MlpSpec, ModelRegistry, VelocityModel
from stageflow.numerics import RngStream, init_params
from stageflow.training import TrainConfig, train


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_models():
    """A quickly trained L/S pair on the default ring (seconds, not minutes)."""
    ds = DatasetSpec()
    out = {}
    for mid, widths in (("L", [32, 32]), ("S", [8])):
        spec = MlpSpec.for_latent(2, widths, ds.num_classes)
        ckpt = train(spec, ds, TrainConfig(steps=300, batch_size=128, eval_every=100, seed=3))
        out[mid] = ckpt.to_model(mid)
    return ModelRegistry(out)


@pytest.fixture
def random_model():
    spec = MlpSpec.for_latent(2, [16, 16], 8)
    params = init_params(spec.dims, RngStream(5, 0))
    return VelocityModel.learned("L", spec, params)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
