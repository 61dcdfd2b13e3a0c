import numpy as np
import pytest

from transavg import SynthConfig, ViewGraph, gen_instance


def exact_graph(truth, pairs, rot_residual=None):
    """View graph whose directions are the exact unit baselines of ``truth``."""
    pairs = np.asarray(pairs)
    dt = truth[pairs[:, 1]] - truth[pairs[:, 0]]
    v = dt / np.linalg.norm(dt, axis=1)[:, None]
    rr = np.zeros(len(pairs)) if rot_residual is None else rot_residual
    return ViewGraph(len(truth), pairs[:, 0], pairs[:, 1], v, rr)


def small_instance(n=12, p=0.5, q=0.0, sigma_deg=0.0, seed=0):
    return gen_instance(SynthConfig(n=n, p=p, q=q, sigma_deg=sigma_deg, seed=seed))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_graph():
    truth = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 4), (2, 4), (3, 4), (2, 3)]
    return exact_graph(truth, pairs), truth


# acceptance results, echoed in the terminal summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
