import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from votingq.exceptions import ConfigurationError, DomainError
from votingq.qcore import (
    ExplicitMDP,
    LearningParams,
    LinearSchedule,
    QTable,
    TransitionSample,
    bellman_backup,
    epsilon_at,
    greedy_action,
    load_tables,
    q_update,
    save_tables,
    value_iteration,
)
from votingq.votecore import TieBreakPolicy


def chain_mdp(n=5, reward=1.0):
    """Actions: 0 = left, 1 = right; entering the last state pays ``reward`` and ends."""
    nxt = np.array([[max(s - 1, 0), min(s + 1, n - 1)] for s in range(n)])
    rew = np.zeros((n, 2))
    term = np.zeros((n, 2), dtype=bool)
    for s in range(n):
        for a in range(2):
            if nxt[s, a] == n - 1:
                rew[s, a], term[s, a] = reward, True
    return nxt, rew, term


def test_update_examples():
    t = QTable(2, 2)
    assert q_update(t, TransitionSample(0, 0, 1.0, 1), LearningParams(0.5, 0.9)) == 0.5
    t = QTable(2, 2, [[1.0, 0.0], [5.0, 5.0]])
    assert q_update(t, TransitionSample(0, 0, 0.0, 1, True), LearningParams(1.0, 0.9)) == 0.0
    t = QTable(2, 2, [[0.0, 0.0], [0.0, 2.0]])
    assert q_update(t, TransitionSample(0, 1, 1.0, 1), LearningParams(0.5, 0.5)) == 1.0


@given(st.integers(0, 3), st.integers(0, 2), st.integers(0, 3), st.floats(-5, 5), st.booleans())
def test_update_touches_one_entry(s, a, s2, r, terminal):
    rng = np.random.default_rng(0)
    t = QTable.random(4, 3, rng)
    before = t.values.copy()
    q_update(t, TransitionSample(s, a, r, s2, terminal), LearningParams(0.3, 0.9))
    mask = np.ones_like(before, dtype=bool)
    mask[s, a] = False
    assert np.array_equal(t.values[mask], before[mask])


def test_update_errors():
    with pytest.raises(DomainError):
        q_update(QTable(2, 2), TransitionSample(2, 0, 0.0, 0), LearningParams())
    with pytest.raises(DomainError):
        q_update(QTable(2, 2), TransitionSample(0, 0, float("nan"), 0), LearningParams())


def test_params_validation():
    for bad in [dict(alpha=0), dict(alpha=1.5), dict(gamma=1.0), dict(gamma=-0.1)]:
        with pytest.raises(ConfigurationError):
            LearningParams(**bad)
    with pytest.raises(ConfigurationError):
        LinearSchedule(0.1, 0.5, 10)
    with pytest.raises(ConfigurationError):
        LinearSchedule(1, 0, 0)


def test_table_validation():
    with pytest.raises(DomainError):
        QTable(2, 2, [[np.inf, 0], [0, 0]])
    with pytest.raises(DomainError):
        QTable(2, 3, np.zeros((3, 2)))


@pytest.mark.parametrize("row, expected", [([0, 0, 0], 0), ([1, 3, 2], 1), ([5, 5, 1], 0)])
def test_greedy_action(row, expected):
    assert greedy_action(QTable(1, 3, [row]), 0) == expected


def test_greedy_action_random_ties():
    t = QTable(1, 3, [[5, 5, 1]])
    picks = {greedy_action(t, 0, TieBreakPolicy.seeded(s)) for s in range(30)}
    assert picks == {0, 1}


def test_epsilon_schedule():
    s = LinearSchedule(1.0, 0.0, 100)
    assert epsilon_at(s, 0) == 1.0
    assert epsilon_at(s, 50) == 0.5
    assert epsilon_at(LinearSchedule(1.0, 0.001, 10**6), 2 * 10**6) == 0.001
    with pytest.raises(DomainError):
        epsilon_at(s, -1)


@given(st.integers(0, 300))
def test_epsilon_is_monotone(t):
    s = LinearSchedule(1.0, 0.05, 200)
    assert s.end <= epsilon_at(s, t + 1) <= epsilon_at(s, t) <= s.start


def test_value_iteration_examples():
    one = ExplicitMDP(np.ones((1, 1, 1)), np.ones((1, 1)))
    assert value_iteration(one, 0.5).values[0, 0] == pytest.approx(2.0, abs=1e-9)
    nxt, rew, term = chain_mdp(2, reward=3.0)
    q = value_iteration(ExplicitMDP.deterministic(nxt, rew, term), 0.9).values
    assert q[0, 1] == pytest.approx(3.0)
    # two steps away: one discounted hop
    nxt, rew, term = chain_mdp(3, reward=3.0)
    q = value_iteration(ExplicitMDP.deterministic(nxt, rew, term), 0.9).values
    assert q[0, 1] == pytest.approx(0.9 * 3.0)
    rng = np.random.default_rng(3)
    T = rng.random((4, 2, 4))
    T /= T.sum(axis=2, keepdims=True)
    R = rng.normal(size=(4, 2))
    assert np.array_equal(value_iteration(ExplicitMDP(T, R), 0.0).values, R)


def test_value_iteration_residual_and_contraction():
    rng = np.random.default_rng(4)
    T = rng.random((6, 3, 6))
    T /= T.sum(axis=2, keepdims=True)
    mdp = ExplicitMDP(T, rng.normal(size=(6, 3)))
    gamma = 0.8
    q = value_iteration(mdp, gamma, tolerance=1e-9).values
    assert np.abs(bellman_backup(mdp, q, gamma) - q).max() < 1e-9
    a, b = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    lhs = np.abs(bellman_backup(mdp, a, gamma) - bellman_backup(mdp, b, gamma)).max()
    assert lhs <= gamma * np.abs(a - b).max() + 1e-12


def test_mdp_validation():
    with pytest.raises(DomainError):
        ExplicitMDP(np.full((2, 1, 2), 0.7), np.zeros((2, 1)))
    with pytest.raises(DomainError):
        ExplicitMDP(np.ones((2, 1, 1)), np.zeros((2, 1)))
    with pytest.raises(DomainError):
        value_iteration(ExplicitMDP(np.ones((1, 1, 1)), np.ones((1, 1))), 1.0)


def learn_chain(steps=50_000, seed=0):
    """Q-learning with uniform exploration and per-visit step size n ** -0.7 on the 5-state chain."""
    nxt, rew, term = chain_mdp(5)
    rng = np.random.default_rng(seed)
    table = QTable(5, 2)
    visits = np.zeros((5, 2))
    s = 0
    for _ in range(steps):
        a = int(rng.integers(2))
        visits[s, a] += 1
        sample = TransitionSample(s, a, rew[s, a], nxt[s, a], bool(term[s, a]))
        q_update(table, sample, LearningParams(visits[s, a] ** -0.7, 0.9))
        s = int(rng.integers(4)) if term[s, a] else int(nxt[s, a])
    return table, ExplicitMDP.deterministic(nxt, rew, term)


def test_q_learning_matches_value_iteration():
    table, mdp = learn_chain()
    oracle = value_iteration(mdp, 0.9)
    # the terminal state is never acted in; compare the states that are
    assert np.abs(table.values[:4] - oracle.values[:4]).max() < 1e-3


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    tables = [QTable.random(3, 4, rng) for _ in range(3)]
    save_tables(tmp_path / "q.npz", tables)
    back = load_tables(tmp_path / "q.npz")
    assert back == tables
