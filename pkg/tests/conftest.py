import numpy as np
import pytest

from pddistiag.cli import ExperimentConfig, build_problem
from pddistiag.moments import Moments


def make_instance(N=3, M=20, d=4, rho=0.1, seed=0, **kw):
    """Synthetic trajectory instance and its saddle-point oracle."""
    cfg = ExperimentConfig(seed=seed, n_agents=N, n_samples=M, feature_dim=d, rho=rho, **kw)
    return build_problem(cfg)


def identity_moments(d=2, N=1, scale_a=1.0, b=None, rho=0.0, M=1):
    A = np.repeat((scale_a * np.eye(d))[None], M, axis=0)
    C = np.repeat(np.eye(d)[None], M, axis=0)
    if b is None:
        b = np.ones(d)
    bb = np.broadcast_to(np.asarray(b, float), (M, N, d)).copy()
    return Moments(A, C, bb, rho)


@pytest.fixture(scope="session")
def small():
    return make_instance(N=3, M=10, d=4, rho=0.1)


@pytest.fixture(scope="session")
def medium():
    return make_instance(N=5, M=50, d=8, rho=0.01)


ACCEPTANCE = {}


def record(key, ok, detail):
    """Register one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"[acceptance] {key}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0][1:].rstrip("abc")), k)):
        ok, detail = ACCEPTANCE[key]
        tr.write_line(f"{key:<28s} {'PASS' if ok else 'FAIL'}  {detail}")
