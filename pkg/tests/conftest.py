import numpy as np
import pytest

from ccmanip.sim import EnvironmentSpec, RobotState, SimConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def free_space(dim=2, **kw):
    return EnvironmentSpec(gravity=np.zeros(dim), **kw)


def quiet(dt=0.001, **kw):
    return SimConfig(timestep=dt, **kw)


def state_with(position, velocity=None, wrench=None):
    s = RobotState.at_rest(position)
    if velocity is not None:
        s.linear_velocity = np.asarray(velocity, dtype=float)
    if wrench is not None:
        s.measured_wrench = np.asarray(wrench, dtype=float)
    return s


def random_spd(rng, n, cond=50.0):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), n)) * rng.uniform(0.01, 2.0)
    return (q * eig) @ q.T


ACCEPTANCE_LINES: dict = {}


def record_acceptance(number: int, ok: bool, detail: str):
    ACCEPTANCE_LINES[number] = f"AC{number}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
