import numpy as np
import pytest

from mppi_pid.dynamics import MlpParams, PhysicalParams, ResidualDynamicsModel

X_SCALE = np.array([1.0, 1.0, 0.7, 0.7, 0.1, 0.02, 0.1])
U_SCALE = np.array([25.0, 30.0])
PHYS = PhysicalParams(k_a=0.0025, k_V=1.0, k_delta=2.5, k_r=1.5)


def random_model(seed: int = 0, scale: float = 1.0) -> ResidualDynamicsModel:
    nn = MlpParams.init_uniform(np.concatenate([X_SCALE, U_SCALE]), out_dim=3, rng=seed)
    if scale != 1.0:
        nn = nn.with_flat(nn.flat() * scale)
    return ResidualDynamicsModel(PHYS, nn)


def moving_state(rng, n=None):
    """Plausible forklift states: positions near a 2 m path, speeds around 0.1 m/s."""
    shape = () if n is None else (n,)
    psi = rng.uniform(-np.pi, np.pi, shape)
    x = np.stack([
        rng.uniform(-0.5, 2.5, shape), rng.uniform(-0.5, 2.5, shape), np.sin(psi), np.cos(psi),
        rng.normal(0.1, 0.05, shape), rng.normal(0.0, 0.02, shape), rng.normal(0.0, 0.1, shape),
    ], axis=-1)
    return x


@pytest.fixture
def model():
    return random_model(0)


@pytest.fixture
def phys_model():
    return ResidualDynamicsModel.physical_only(PHYS, X_SCALE, U_SCALE)


VERDICTS: dict = {}


def record_verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    VERDICTS[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
