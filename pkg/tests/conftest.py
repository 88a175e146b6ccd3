import numpy as np
import pytest

from driftflow.cli import f02
from driftflow.energy import ProblemSpec
from driftflow.grid_ops import EdgeFunction, nodes


def make_spec(n, f0="uniform", **kw):
    if isinstance(f0, str) and f0 == "uniform":
        values = np.ones(n + 1)
    elif isinstance(f0, str) and f0 == "f02":
        values = f02(nodes(n))
    else:
        values = np.asarray(f0, dtype=float)
    return ProblemSpec(EdgeFunction(values, 1.0 / n), **kw)


def random_q(rng, n, lo=0.0, hi=1.0):
    """Random strictly increasing positions with x_0 = lo, x_N = hi."""
    gaps = rng.uniform(0.2, 1.0, n)
    x = np.concatenate(([0.0], np.cumsum(gaps) / gaps.sum()))
    x = lo + (hi - lo) * x
    x[0], x[-1] = lo, hi
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


DESK_N = 1000
DESK_TAU = 1e-3
DESK_T_END = 10.0


def _delta_history(s=0.0, selection=False):
    from driftflow.delta import DeltaSpec, iter_delta
    from driftflow.stepper import SolverParams

    history, final = [], None
    gen = iter_delta(DeltaSpec(0.4), DESK_N, SolverParams(tau=DESK_TAU), DESK_T_END, s=s, Ne=1e4, selection=selection)
    for _, _, field, diag in gen:
        history.append(diag)
        final = field
    return history, final


@pytest.fixture(scope="session")
def desk_pure_drift():
    """Per-step diagnostics of the x0 = 0.4 delta run at h = tau = 1e-3."""
    return _delta_history()


@pytest.fixture(scope="session")
def desk_selection():
    """Same run under semi-selection with s = +1e-4 and s = -1e-4, Ne = 1e4."""
    return {s: _delta_history(s, True) for s in (1e-4, -1e-4)}


ACCEPTANCE_LINES: list[str] = []


def record_criterion(label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
