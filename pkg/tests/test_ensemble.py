import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sane.ensemble import (DriftVerdict, Ensemble, LineageEvent, activate, activation_scores,
                           closest_pair, create_module, detect_drift, drift_stats, mean_frame,
                           merge_step, replay_lineage, select, structure_update)
from sane.errors import UnknownModuleError
from sane.losses import LossWeights, VTraceConfig
from sane.module import AlphaConfig, anchor_value, ucb
from sane.seeding import seed_streams

from conftest import inverse_softplus, make_traj, set_linear_critic

W, CFG = LossWeights(), VTraceConfig()
S_BATCH = np.random.default_rng(0).uniform(size=(4, 3))


def make_ensemble(n=3, max_modules=3, seed=0):
    return Ensemble.create(n, max_modules, AlphaConfig(), obs_dim=3, n_actions=2,
                           buffer_capacity=50, rngs=seed_streams(seed), hidden_dims=(4,))


def hand_critic(m, target_v, target_u, anchor_v):
    set_linear_critic(m.target_critic, target_v, inverse_softplus(target_u) if target_u else -60.0)
    set_linear_critic(m.anchor, anchor_v, 0.0)


def brute_force_pair(frames):
    best = None
    for i, j in itertools.combinations(sorted(frames), 2):
        d = float(np.sqrt(np.sum((frames[i] - frames[j]) ** 2)))
        if best is None or d < best[2] - 1e-15:
            best = (i, j, d)
    return best


# -- activation -----------------------------------------------------------------

def test_single_module_always_selected(streams):
    e = Ensemble.create(1, 1, AlphaConfig(), 3, 2, 10, streams, hidden_dims=(4,))
    for s in np.random.default_rng(1).normal(size=(5, 3)):
        assert select(e, s) == 0


def test_argmax_and_usage():
    e = make_ensemble(2, 2)
    set_linear_critic(e.get(0).target_critic, 2.0, inverse_softplus(0.5))
    set_linear_critic(e.get(1).target_critic, 1.0, -60.0)
    assert activation_scores(e, np.zeros(3))[0] == pytest.approx(2.5)
    assert activate(e, np.zeros(3)) == 0
    assert e.get(0).usage_count == 1 and e.get(1).usage_count == 0


def test_ties_go_to_lowest_id_regardless_of_order():
    e = make_ensemble(3)
    for m in e.modules:
        set_linear_critic(m.target_critic, 1.0, 0.0)
    e.modules.reverse()
    assert select(e, np.zeros(3)) == 0


@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_permutation_and_shift_invariance(seed, c):
    e = make_ensemble(4, 4, seed=seed % 50)
    rng = np.random.default_rng(seed)
    s0 = rng.normal(size=3)
    base = select(e, s0)
    scores = activation_scores(e, s0)
    assert base == max(sorted(scores), key=lambda i: scores[i])
    e.modules = [e.modules[i] for i in rng.permutation(4)]
    assert select(e, s0) == base
    for m in e.modules:
        m.target_critic.layers[-1][1][0] += c
    assert select(e, s0) == base


# -- drift --------------------------------------------------------------------------

def test_drift_verdict_examples():
    m = make_ensemble(1, 1).get(0)
    hand_critic(m, 0.8, 0.0, 1.0)
    assert detect_drift(m, S_BATCH, AlphaConfig()) is DriftVerdict.NEGATIVE
    hand_critic(m, 1.5, 0.0, 1.0)
    assert detect_drift(m, S_BATCH, AlphaConfig()) is DriftVerdict.POSITIVE
    hand_critic(m, 1.0, 0.1, 1.0)
    st_ = drift_stats(m, S_BATCH, AlphaConfig())
    assert st_.verdict is DriftVerdict.NONE
    assert st_.upper == pytest.approx(1.01) and st_.lower == pytest.approx(0.0)


def test_fresh_module_has_no_drift():
    e = make_ensemble(3)
    for m in e.modules:
        # anchor equals the online critic, which equals the target at creation
        assert detect_drift(m, S_BATCH, e.alphas) is DriftVerdict.NONE


def test_regime_a_negative_spawns_one_clone():
    e = make_ensemble(1, 4)
    parent = e.get(0)
    parent.buffer.insert(make_traj(0))
    hand_critic(parent, 0.8, 0.0, 1.0)
    parent_hash = parent.state_hash()
    stats, spawned, merges = structure_update(e, 0, S_BATCH, W, CFG, 7, 10, 0.9)
    assert stats.verdict is DriftVerdict.NEGATIVE
    assert spawned == 1 and merges == []
    assert e.lineage == [LineageEvent("spawn", 0, 1, 7)]
    child = e.get(1)
    assert len(child.buffer) == 0
    np.testing.assert_array_equal(child.anchor.params, parent.critic.params)
    assert child.anchor.frozen
    assert parent.state_hash() == parent_hash
    np.testing.assert_array_equal(ucb(child, S_BATCH, 0.1), ucb(parent, S_BATCH, 0.1))


def test_regime_b_positive_refreshes_anchor():
    e = make_ensemble(1, 4)
    m = e.get(0)
    hand_critic(m, 1.5, 0.0, 1.0)
    stats, spawned, merges = structure_update(e, 0, S_BATCH, W, CFG, 3, 10, 0.9)
    assert stats.verdict is DriftVerdict.POSITIVE
    assert spawned is None and merges == [] and e.lineage == []
    np.testing.assert_array_equal(m.anchor.params, m.critic.params)
    assert m.anchor.frozen


def test_regime_c_inside_interval_is_silent():
    e = make_ensemble(1, 4)
    m = e.get(0)
    hand_critic(m, 1.0, 0.1, 1.0)
    anchor = m.anchor.param_hash()
    before = e.state_hash()
    stats, spawned, merges = structure_update(e, 0, S_BATCH, W, CFG, 3, 10, 0.9)
    assert stats.verdict is DriftVerdict.NONE and spawned is None and merges == []
    assert m.anchor.param_hash() == anchor and e.state_hash() == before


def test_regime_d_over_budget_merges_closest_pair_into_more_used():
    e = make_ensemble(3, 3)
    # module frames: 0 near 2, 1 far away; module 2 used more
    for mid in (0, 1, 2):
        center = {0: 0.1, 1: 0.9, 2: 0.15}[mid]
        e.get(mid).buffer.insert(make_traj(10 * mid, obs=np.full((1, 3), center)))
    e.get(0).usage_count, e.get(2).usage_count = 3, 5
    hand_critic(e.get(1), 0.8, 0.0, 1.0)        # module 1 drifts negatively
    frames = {m.id: mean_frame(m, 32, np.random.default_rng(0)) for m in e.modules}
    _, spawned, merges = structure_update(e, 1, S_BATCH, W, CFG, 9, 10, 0.9)
    assert spawned == 3
    # the new clone has an empty buffer, so the scan covers modules 0..2
    oracle = brute_force_pair(frames)
    assert (merges[0].keep_id, merges[0].drop_id) == (2, 0)
    assert {merges[0].keep_id, merges[0].drop_id} == {oracle[0], oracle[1]}
    assert merges[0].distance == pytest.approx(oracle[2])
    assert sorted(e.ids) == [1, 2, 3]
    assert e.get(2).usage_count == 8
    assert 0 in e.get(2).buffer
    assert e.lineage[-1] == LineageEvent("merge", 2, 0, 9)


def test_create_module_counter_semantics():
    e = make_ensemble(1, 4)
    assert create_module(e, 0, 5) == 1
    assert e.lineage == [LineageEvent("spawn", 0, 1, 5)]
    assert e.get(1).usage_count == 0
    # target equals critic in a fresh module, so the child's interval contains its anchor
    assert detect_drift(e.get(1), S_BATCH, e.alphas) is DriftVerdict.NONE
    np.testing.assert_array_equal(anchor_value(e.get(1), S_BATCH), anchor_value(e.get(0), S_BATCH))
    with pytest.raises(UnknownModuleError):
        create_module(e, 42, 5)


# -- merge ----------------------------------------------------------------------------

def test_mean_frame_examples():
    e = make_ensemble(1, 1)
    m = e.get(0)
    assert mean_frame(m, 4, np.random.default_rng(0)) is None
    m.buffer.insert(make_traj(0, obs=[[1.0, 2.0, 0.0]]))
    np.testing.assert_array_equal(mean_frame(m, 4, np.random.default_rng(0)), [1.0, 2.0, 0.0])
    m.buffer.clear()
    m.buffer.insert(make_traj(1, obs=[[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]))
    np.testing.assert_array_equal(mean_frame(m, 4, np.random.default_rng(0)), [1.0, 1.0, 1.0])


def test_mean_frame_full_buffer_equals_exhaustive_mean():
    e = make_ensemble(1, 1)
    m = e.get(0)
    for i in range(6):
        m.buffer.insert(make_traj(i, n=int(i % 3) + 1))
    allobs = np.concatenate([t.observations for t in m.buffer])
    np.testing.assert_allclose(mean_frame(m, 6, np.random.default_rng(0)), allobs.mean(axis=0))


@given(st.integers(0, 10_000), st.integers(2, 7))
def test_closest_pair_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    frames = {int(i): rng.integers(0, 4, size=3).astype(float) for i in rng.permutation(20)[:n]}
    i, j, d = closest_pair(frames)
    bi, bj, bd = brute_force_pair(frames)
    assert (i, j) == (bi, bj) and d == pytest.approx(bd)


def test_closest_pair_skips_empty_and_falls_back_to_newest():
    frames = {0: np.zeros(2), 1: None, 2: np.ones(2), 3: np.zeros(2) + 0.1}
    assert closest_pair(frames)[:2] == (0, 3)
    assert closest_pair({0: np.zeros(2), 4: None, 2: None})[:2] == (0, 4)
    with pytest.raises(ValueError):
        closest_pair({0: None})


def test_identical_frames_pair_selected():
    e = make_ensemble(3, 2)
    e.get(0).buffer.insert(make_traj(0, obs=[[0.5, 0.5, 0.5]]))
    e.get(1).buffer.insert(make_traj(1, obs=[[0.0, 0.0, 0.0]]))
    e.get(2).buffer.insert(make_traj(2, obs=[[0.5, 0.5, 0.5]]))
    merges = merge_step(e, W, CFG, 0, 10, 0.9)
    assert len(merges) == 1 and merges[0].distance == 0.0
    assert {merges[0].keep_id, merges[0].drop_id} == {0, 2}


def test_merge_to_single_module():
    e = make_ensemble(2, 1)
    for m in e.modules:
        m.buffer.insert(make_traj(0, obs=[[0.2, 0.2, 0.2]]))
    e.get(1).usage_count = 4
    merges = merge_step(e, W, CFG, 11, 10, 0.9)
    assert e.ids == [1] and merges[0].keep_id == 1 and len(e) == 1


def test_merge_mutates_only_survivor():
    e = make_ensemble(4, 3)
    for m in e.modules:
        m.buffer.insert(make_traj(m.id, obs=np.full((1, 3), 0.1 * m.id)))
    hashes = {m.id: m.state_hash() for m in e.modules}
    merges = merge_step(e, W, CFG, 0, 10, 0.9)
    keep = merges[0].keep_id
    for m in e.modules:
        if m.id != keep:
            assert m.state_hash() == hashes[m.id]
    assert e.get(keep).param_hash() != hashes[keep]


def test_replay_lineage_reconstructs_live_set():
    e = make_ensemble(1, 2)
    rng = np.random.default_rng(0)
    for step in range(12):
        parent = int(rng.choice(e.ids))
        create_module(e, parent, step)
        for m in e.modules:
            if not len(m.buffer):
                m.buffer.insert(make_traj(100 + m.id, obs=rng.uniform(size=(1, 3))))
        merge_step(e, W, CFG, step, 10, 0.9)
        assert len(e) <= e.max_modules
        assert replay_lineage(e.lineage, [0]) == set(e.ids)
    with pytest.raises(ValueError):
        replay_lineage([LineageEvent("split", 0, 1, 0)], [0])
    ev = LineageEvent("merge", 3, 4, 8)
    assert LineageEvent.from_json(ev.to_json()) == ev
