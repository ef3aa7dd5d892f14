import numpy as np
import pytest

from dada_kit.filters import GaussianBelief
from dada_kit.models import HmmSpec, Trajectory, observe, simulate


def random_spd(rng, n, scale=1.0, floor=0.1):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T / n + floor * np.eye(n))


def random_linear_hmm(rng, N, d, T):
    """Stable random linear-Gaussian HMM, a prior, and one sequence simulated from it."""
    A = rng.standard_normal((N, N))
    M = 0.9 * A / max(1.0, np.max(np.abs(np.linalg.eigvals(A))))
    spec = HmmSpec(M, rng.standard_normal((d, N)), random_spd(rng, N, 0.5), random_spd(rng, d, 0.3))
    prior = GaussianBelief(rng.standard_normal(N), random_spd(rng, N))
    x0 = prior.mean + np.linalg.cholesky(prior.cov) @ rng.standard_normal(N)
    traj = simulate(spec, x0, T, rng)
    y = observe(traj, spec, rng)
    return spec, prior, y


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def linear_case(rng):
    return random_linear_hmm(rng, 3, 2, 8)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
