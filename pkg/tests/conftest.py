import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sane.ensemble import Ensemble
from sane.module import AlphaConfig
from sane.nn import Network
from sane.replay import Trajectory
from sane.seeding import seed_streams

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_traj(tid, n=1, obs_dim=3, n_actions=2, rng=None, done=True, reward=0.0,
              obs=None, task_id=-1, reservoir_value=None):
    """Small valid trajectory; observations default to random uniform rows."""
    rng = rng or np.random.default_rng(tid)
    if obs is None:
        obs = rng.uniform(size=(n, obs_dim))
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n = len(obs)
    probs = np.full((n, n_actions), 1.0 / n_actions)
    dones = [False] * (n - 1) + [done]
    final = None if done else rng.uniform(size=obs.shape[1])
    return Trajectory(obs, rng.integers(0, n_actions, size=n), probs, [reward] * n, dones, tid,
                      final_observation=final, task_id=task_id,
                      reservoir_value=reservoir_value)


def set_linear_critic(net: Network, v: float, raw_u: float):
    """Make a critic output the constant ``(v, raw_u)`` for every input."""
    net.params[:] = 0.0
    w, b = net.layers[-1]
    b[0] = v
    b[1] = raw_u


def inverse_softplus(u: float) -> float:
    return float(np.log(np.expm1(u)))


@pytest.fixture
def streams():
    return seed_streams(123)


@pytest.fixture
def small_ensemble(streams):
    return Ensemble.create(3, 3, AlphaConfig(), obs_dim=3, n_actions=2, buffer_capacity=50,
                           rngs=streams, hidden_dims=(4,))


# -- acceptance reporting ------------------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line in the terminal summary;
# a test may attach a measured detail with ``record_property("detail", text)``.

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


def pytest_runtest_logreport(report):
    mark = _CRITERIA_MARKS.get(report.nodeid)
    if mark is None:
        return
    n, title = mark
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[n] = (title, "PASS" if report.passed else "FAIL", detail)


_CRITERIA_MARKS: dict[str, tuple[int, str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA_MARKS[item.nodeid] = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, verdict, detail = _CRITERIA[n]
        line = f"criterion {n:2d} {verdict}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
