import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from sane.errors import ConfigError, EmptyBufferError, InvalidTrajectoryError
from sane.replay import ReplayBuffer, Step, Trajectory, TrajectoryCounter, merge_buffers

from conftest import make_traj


def top_k_oracle(trajs, capacity):
    """Ids a frame-capacity reservoir should keep for equal-length trajectories:
    the highest reservoir values, ties going to the lower id."""
    ranked = sorted(trajs, key=lambda t: (t.reservoir_value, -t.trajectory_id), reverse=True)
    kept, frames = set(), 0
    for t in ranked:
        if frames + len(t) > capacity:
            break
        kept.add(t.trajectory_id)
        frames += len(t)
    return kept


def test_trajectory_validation():
    probs = np.array([[0.5, 0.5]])
    with pytest.raises(InvalidTrajectoryError):
        Trajectory(np.zeros((0, 2)), [], np.zeros((0, 2)), [], [], 0)
    with pytest.raises(InvalidTrajectoryError):
        Trajectory(np.zeros((2, 2)), [0], probs, [0.0], [True], 0)
    with pytest.raises(InvalidTrajectoryError):
        Trajectory(np.zeros((1, 2)), [0], [[0.7, 0.7]], [0.0], [True], 0)
    with pytest.raises(InvalidTrajectoryError):
        Trajectory(np.zeros((1, 2)), [0], probs, [0.0], [False], 0)
    with pytest.raises(InvalidTrajectoryError):
        Trajectory(np.zeros((2, 2)), [0, 0], np.vstack([probs, probs]), [0.0, 0.0],
                   [True, True], 0)


def test_reward_clipping_keeps_raw_return():
    t = Trajectory(np.zeros((2, 2)), [0, 1], [[0.5, 0.5]] * 2, [5.0, -3.0], [False, True], 0)
    np.testing.assert_array_equal(t.rewards, [1.0, -1.0])
    assert t.episode_return == 2.0


def test_from_steps_round_trip():
    steps = [Step(np.array([0.0, 1.0]), 1, np.array([0.25, 0.75]), 0.5, False),
             Step(np.array([1.0, 0.0]), 0, np.array([0.5, 0.5]), 1.0, True)]
    t = Trajectory.from_steps(steps, 7)
    assert len(t) == 2 and not t.truncated
    assert [s.action for s in t.steps] == [1, 0]


def test_insert_assigns_reservoir_value_once():
    buf = ReplayBuffer(10, np.random.default_rng(0))
    t = make_traj(0)
    buf.insert(t)
    rv = t.reservoir_value
    assert 0.0 <= rv < 1.0
    buf.insert(t)
    assert t.reservoir_value == rv and len(buf) == 1


def test_insert_rejects_oversized_trajectory():
    buf = ReplayBuffer(2, np.random.default_rng(0))
    with pytest.raises(InvalidTrajectoryError):
        buf.insert(make_traj(0, n=3))


def test_eviction_keeps_highest_reservoir_values():
    buf = ReplayBuffer(3, np.random.default_rng(0))
    trajs = [make_traj(i, reservoir_value=v) for i, v in enumerate([0.5, 0.1, 0.9, 0.7, 0.3])]
    for t in trajs:
        buf.insert(t)
    assert buf.retained_ids() == {0, 2, 3}
    assert buf.frame_count == 3


def test_eviction_tie_drops_higher_id():
    buf = ReplayBuffer(1, np.random.default_rng(0))
    buf.insert(make_traj(4, reservoir_value=0.5))
    assert not buf.insert(make_traj(9, reservoir_value=0.5))
    assert buf.retained_ids() == {4}


def test_whole_trajectory_eviction_by_frames():
    buf = ReplayBuffer(5, np.random.default_rng(0))
    buf.insert(make_traj(0, n=3, reservoir_value=0.2))
    buf.insert(make_traj(1, n=3, reservoir_value=0.8))
    assert buf.retained_ids() == {1} and buf.frame_count == 3


@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=40), st.integers(1, 12))
def test_retention_matches_top_k(values, capacity):
    buf = ReplayBuffer(capacity, np.random.default_rng(0))
    trajs = [make_traj(i, reservoir_value=v) for i, v in enumerate(values)]
    for t in trajs:
        buf.insert(t)
    assert buf.retained_ids() == top_k_oracle(trajs, capacity)
    assert buf.frame_count <= capacity


def test_sampling():
    buf = ReplayBuffer(10, np.random.default_rng(0))
    with pytest.raises(EmptyBufferError):
        buf.sample(1, np.random.default_rng(0))
    assert buf.sample(0, np.random.default_rng(0)) == []
    for i in range(3):
        buf.insert(make_traj(i))
    drawn = buf.sample(300, np.random.default_rng(1))
    counts = np.bincount([t.trajectory_id for t in drawn], minlength=3)
    assert len(drawn) == 300 and counts.min() > 60


def test_retention_uniform_small():
    capacity, n, reps = 5, 50, 2000
    counts = np.zeros(n)
    rng = np.random.default_rng(0)
    for _ in range(reps):
        buf = ReplayBuffer(capacity, rng)
        for i in range(n):
            buf.insert(make_traj(i, rng=rng, obs=np.zeros((1, 1))))
        counts[list(buf.retained_ids())] += 1
    expected = np.full(n, reps * capacity / n)
    assert stats.chisquare(counts, expected).pvalue > 0.01


@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=0, max_size=15),
       st.lists(st.floats(0, 1, exclude_max=True), min_size=0, max_size=15),
       st.integers(1, 10))
def test_merge_equals_top_k_of_union(a_vals, b_vals, capacity):
    keep = ReplayBuffer(capacity, np.random.default_rng(0))
    drop = ReplayBuffer(capacity, np.random.default_rng(1))
    a = [make_traj(i, reservoir_value=v) for i, v in enumerate(a_vals)]
    b = [make_traj(100 + i, reservoir_value=v) for i, v in enumerate(b_vals)]
    for t in a:
        keep.insert(t)
    for t in b:
        drop.insert(t)
    union = [t for t in a if t.trajectory_id in keep] + [t for t in b if t.trajectory_id in drop]
    merge_buffers(keep, drop)
    assert keep.retained_ids() == top_k_oracle(union, capacity)


def test_merge_rejects_capacity_mismatch():
    with pytest.raises(ConfigError):
        merge_buffers(ReplayBuffer(3), ReplayBuffer(4))


def test_clear_and_counter():
    buf = ReplayBuffer(4, np.random.default_rng(0))
    buf.insert(make_traj(0))
    buf.clear()
    assert len(buf) == 0 and buf.frame_count == 0 and 0 not in buf
    c = TrajectoryCounter(5)
    assert [c(), c(), c()] == [5, 6, 7] and c.next_value == 8
