import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cp3er.replay import InsufficientData, ReplayBuffer, Transition, ppe_weight


def _t(step, reward=0.0, done=False, terminal=False, obs=None, dim=2):
    o = np.full(dim, float(step)) if obs is None else obs
    return Transition(o, np.full(1, step / 100.0), reward, o + 0.5, done, step, terminal)


def test_ring_overwrites_oldest():
    buf = ReplayBuffer(4, (2,), 1)
    for s in range(5):
        buf.push(_t(s))
    assert len(buf) == 4
    assert sorted(buf.insert_steps.tolist()) == [1, 2, 3, 4]
    assert buf.get(0).insert_step == 4


def test_reread_preserves_fields():
    buf = ReplayBuffer(8, (2,), 1)
    buf.push(_t(7, reward=1.5, done=True))
    t = buf.get(0)
    assert t.insert_step == 7 and t.reward == 1.5 and t.done
    np.testing.assert_array_equal(t.next_observation, [7.5, 7.5])


def test_terminal_implies_boundary_flag():
    buf = ReplayBuffer(8, (2,), 1)
    buf.push(_t(0, terminal=True))
    assert buf.dones[0] and buf.terminals[0]


def test_insert_step_must_increase():
    buf = ReplayBuffer(8, (2,), 1)
    buf.push(_t(3))
    with pytest.raises(ValueError):
        buf.push(_t(3))


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0, 4.0])
def test_ppe_weight_half_at_capacity(alpha):
    assert ppe_weight(alpha, 1000, 1000) == 0.5


def test_ppe_weight_examples():
    assert ppe_weight(2.0, 2000, 1000) == pytest.approx(1 / (1 + math.e**2), rel=1e-15)
    assert ppe_weight(2.0, 1e-6, 1000) == pytest.approx(1.0)
    assert ppe_weight(0.0, 37, 1000) == 0.5
    with pytest.raises(ValueError):
        ppe_weight(1.0, 0, 10)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 4.0), st.integers(10, 10**6), st.floats(0.25, 20.0), st.floats(1.01, 3.0))
def test_ppe_weight_monotone_and_bounded(alpha, cap, ratio, factor):
    dt = ratio * cap
    w1, w2 = ppe_weight(alpha, dt, cap), ppe_weight(alpha, dt * factor, cap)
    assert 0.0 < w2 < w1 < 1.0


def _draw(sampler, buf, total):
    """Repeated full-size draws; a single draw may not exceed the buffer size."""
    return np.concatenate([sampler(len(buf)) for _ in range(total // len(buf))])


def _aged_buffer(n, current_span, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(n, (1,), 1)
    steps = np.sort(rng.choice(current_span, size=n, replace=False))
    for s in steps:
        buf.push(Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False, int(s)))
    return buf


def test_kernel_weights_match_scalar_formula():
    buf = _aged_buffer(50, 400)
    w = buf.ppe_weights(2.0)
    ref = [ppe_weight(2.0, max(buf.current_step - s, 1), buf.capacity) for s in buf.insert_steps[:50]]
    np.testing.assert_allclose(w, ref, rtol=1e-14)


def test_same_step_items_are_uniform():
    buf = ReplayBuffer(10, (1,), 1)
    buf.push(Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False, 5))
    for i in range(1, 10):
        buf.insert_steps[i] = 5
    buf.size = 10
    np.testing.assert_allclose(buf.ppe_probabilities(2.0), np.full(10, 0.1))


def test_two_item_frequencies():
    # item ages |B| and 2|B| give weights 0.5 and 0.1192
    buf = ReplayBuffer(2, (1,), 1)
    buf.insert_steps[:] = [2, 0]
    buf.size, buf.current_step = 2, 4
    w = buf.ppe_weights(2.0)
    np.testing.assert_allclose(w, [0.5, 1 / (1 + math.e**2)], rtol=1e-14)
    rng = np.random.default_rng(0)
    idx = _draw(lambda k: buf.sample_ppe(2.0, k, rng), buf, 100_000)
    counts = np.bincount(idx, minlength=2)
    p = w / w.sum()
    assert p[0] == pytest.approx(0.8075, abs=1e-4)
    assert stats.chisquare(counts, p * idx.size).pvalue > 0.01


def test_zero_alpha_is_uniform():
    buf = _aged_buffer(20, 1000)
    np.testing.assert_allclose(buf.ppe_probabilities(0.0), np.full(20, 0.05))


def test_tv_distance_of_ppe_sampling():
    buf = _aged_buffer(100, 300, seed=1)
    p = buf.ppe_probabilities(2.0)
    assert p.max() / p.min() > 1.5
    rng = np.random.default_rng(2)
    idx = _draw(lambda k: buf.sample_ppe(2.0, k, rng), buf, 100_000)
    freq = np.bincount(idx, minlength=100) / idx.size
    assert 0.5 * np.abs(freq - p).sum() < 0.02


def test_insufficient_data():
    buf = ReplayBuffer(10, (1,), 1)
    buf.push(_t(0, dim=1))
    with pytest.raises(InsufficientData):
        buf.sample_ppe(2.0, 2, np.random.default_rng())
    with pytest.raises(InsufficientData):
        buf.sample_uniform(2, np.random.default_rng())


def test_uniform_sampling_frequencies():
    buf = _aged_buffer(10, 100)
    rng = np.random.default_rng(3)
    idx = _draw(lambda k: buf.sample_uniform(k, rng), buf, 100_000)
    assert stats.chisquare(np.bincount(idx, minlength=10)).pvalue > 0.01


def _filled(rewards, dones=None, terminals=None, cap=None):
    n = len(rewards)
    buf = ReplayBuffer(cap or n, (1,), 1)
    dones = dones or [False] * n
    terminals = terminals or [False] * n
    for i, r in enumerate(rewards):
        buf.push(Transition(np.full(1, i), np.zeros(1), r, np.full(1, i + 0.5), dones[i], i, terminals[i]))
    return buf


def test_one_step_is_plain_transition():
    buf = _filled([0.3, 0.7, 0.1])
    b = buf.assemble_nstep(np.array([0, 1]), 1, 0.99)
    np.testing.assert_array_equal(b.reward_sum, [0.3, 0.7])
    np.testing.assert_array_equal(b.discount, [0.99, 0.99])
    np.testing.assert_array_equal(b.next_obs[:, 0], [0.5, 1.5])


def test_three_step_hand_values():
    buf = _filled([1.0, 1.0, 1.0, 0.0])
    b = buf.assemble_nstep(np.array([0]), 3, 0.99)
    assert b.reward_sum[0] == pytest.approx(2.9701, abs=1e-12)
    assert b.discount[0] == pytest.approx(0.970299, abs=1e-12)
    assert b.next_obs[0, 0] == 2.5


def test_episode_end_truncates_window():
    buf = _filled([1.0, 5.0, 5.0, 5.0], dones=[True, False, False, False])
    b = buf.assemble_nstep(np.array([0]), 3, 0.99)
    assert b.reward_sum[0] == 1.0 and b.discount[0] == 0.99 and b.next_obs[0, 0] == 0.5


def test_terminal_zeroes_discount():
    buf = _filled([1.0, 2.0, 5.0], terminals=[False, True, False])
    b = buf.assemble_nstep(np.array([0]), 3, 0.5)
    assert b.reward_sum[0] == 2.0 and b.discount[0] == 0.0


def test_window_stops_at_newest():
    buf = _filled([1.0, 1.0, 1.0], cap=8)
    b = buf.assemble_nstep(np.array([2]), 3, 0.9)
    assert b.reward_sum[0] == 1.0 and b.discount[0] == 0.9


def brute_force_nstep(buf, indices, n, gamma):
    """Reference n-step assembly written directly against the stored lists."""
    rewards = buf.rewards.tolist()
    dones = buf.dones.tolist()
    terms = buf.terminals.tolist()
    newest = (buf.cursor - 1) % buf.capacity
    out = []
    for i in indices.tolist():
        acc, g, k = 0.0, 1.0, i
        for j in range(n):
            k = (i + j) % buf.capacity
            acc += g * rewards[k]
            g *= gamma
            if terms[k]:
                g = 0.0
                break
            if dones[k] or k == newest:
                break
        out.append((acc, g, k))
    return out


def random_buffer(rng):
    cap = int(rng.integers(1, 12))
    pushes = int(rng.integers(1, 3 * cap + 1))
    buf = ReplayBuffer(cap, (1,), 1)
    for s in range(pushes):
        done = bool(rng.random() < 0.25)
        term = done and bool(rng.random() < 0.5)
        r = float(rng.normal())
        buf.push(Transition(np.full(1, s), np.zeros(1), r, np.full(1, s + 0.5), done, s, term))
    return buf


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.floats(0.0, 1.0))
def test_nstep_matches_brute_force(seed, n, gamma):
    rng = np.random.default_rng(seed)
    buf = random_buffer(rng)
    idx = rng.integers(0, len(buf), size=8)
    batch = buf.assemble_nstep(idx, n, gamma)
    for row, (acc, disc, last) in enumerate(brute_force_nstep(buf, idx, n, gamma)):
        assert batch.reward_sum[row] == acc
        assert batch.discount[row] == disc
        np.testing.assert_array_equal(batch.next_obs[row], buf.next_obs[last])


def test_nstep_rejects_zero_n():
    with pytest.raises(ValueError):
        _filled([1.0]).assemble_nstep(np.array([0]), 0, 0.9)


def test_save_load_round_trip(tmp_path):
    buf = random_buffer(np.random.default_rng(4))
    path = buf.save(tmp_path / "buf.ckpt")
    back = ReplayBuffer.load(path)
    assert (back.cursor, back.size, back.current_step) == (buf.cursor, buf.size, buf.current_step)
    for k, v in buf.state_arrays().items():
        np.testing.assert_array_equal(back.state_arrays()[k], v)
