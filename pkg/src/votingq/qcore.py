"""Tabular Q-learning primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .votecore import LOWEST_INDEX, TieBreakPolicy


@dataclass(frozen=True)
class LinearSchedule:
    start: float = 1.0
    end: float = 0.001
    anneal_steps: int = 1_000_000

    def __post_init__(self):
        if not 0 <= self.end <= self.start <= 1:
            raise ConfigurationError(f"need 0 <= end <= start <= 1, got start={self.start}, end={self.end}")
        if self.anneal_steps < 1:
            raise ConfigurationError("anneal_steps must be positive")


def epsilon_at(schedule: LinearSchedule, t: int) -> float:
    """Linearly interpolated exploration rate at step ``t``, flat at ``end`` afterwards."""
    if t < 0:
        raise DomainError("step must be non-negative")
    if t >= schedule.anneal_steps:
        return schedule.end
    return schedule.start + (schedule.end - schedule.start) * (t / schedule.anneal_steps)


@dataclass(frozen=True)
class LearningParams:
    alpha: float = 0.2
    gamma: float = 0.9
    epsilon: LinearSchedule = LinearSchedule()

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigurationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")


@dataclass(frozen=True)
class TransitionSample:
    state: int
    action: int
    reward: float
    next_state: int
    terminal: bool = False


class QTable:
    """Dense ``state_count x action_count`` table of action values."""

    def __init__(self, state_count, action_count, values=None):
        if state_count < 1 or action_count < 1:
            raise DomainError("table dimensions must be positive")
        if values is None:
            values = np.zeros((state_count, action_count))
        values = np.array(values, dtype=np.float64)
        if values.shape != (state_count, action_count):
            raise DomainError(f"values shape {values.shape} != ({state_count}, {action_count})")
        if not np.isfinite(values).all():
            raise DomainError("Q values must be finite")
        self.values = values

    @classmethod
    def random(cls, state_count, action_count, rng, low=-0.01, high=0.01):
        return cls(state_count, action_count, rng.uniform(low, high, size=(state_count, action_count)))

    @property
    def state_count(self):
        return self.values.shape[0]

    @property
    def action_count(self):
        return self.values.shape[1]

    def copy(self):
        return QTable(self.state_count, self.action_count, self.values.copy())

    def __eq__(self, other):
        return isinstance(other, QTable) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"QTable({self.state_count}, {self.action_count})"


def q_update(table: QTable, sample: TransitionSample, params: LearningParams) -> float:
    """Apply one Q-learning backup in place and return the new ``Q(s, a)``.

    The bootstrap term is dropped on terminal transitions.
    """
    S, A = table.values.shape
    s, a, s2 = sample.state, sample.action, sample.next_state
    if not (0 <= s < S and 0 <= s2 < S and 0 <= a < A):
        raise DomainError(f"transition ({s}, {a}, {s2}) out of range for a {S}x{A} table")
    if not math.isfinite(sample.reward):
        raise DomainError("reward must be finite")
    bootstrap = 0.0 if sample.terminal else float(table.values[s2].max())
    q = float(table.values[s, a])
    new = (1.0 - params.alpha) * q + params.alpha * (sample.reward + params.gamma * bootstrap)
    table.values[s, a] = new
    return new


def greedy_action(table: QTable, state: int, tiebreak: TieBreakPolicy = LOWEST_INDEX) -> int:
    row = table.values[state]
    tied = np.flatnonzero(row == row.max())
    return tiebreak.chooser()(tied)


# -- explicit MDPs ----------------------------------------------------------

@dataclass(frozen=True)
class ExplicitMDP:
    """Finite MDP given by tables.

    ``transitions[s, a, s2]`` is a probability, ``rewards[s, a]`` the expected
    reward and ``terminal[s, a, s2]`` (optional) marks transitions after which
    no value is bootstrapped.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray | None = None

    def __post_init__(self):
        T = np.asarray(self.transitions, dtype=np.float64)
        R = np.asarray(self.rewards, dtype=np.float64)
        if T.ndim != 3 or T.shape[0] != T.shape[2] or R.shape != T.shape[:2]:
            raise DomainError(f"inconsistent table shapes T{T.shape}, R{R.shape}")
        if (T < 0).any() or not np.allclose(T.sum(axis=2), 1.0, atol=1e-12):
            raise DomainError("transition rows must be probability distributions")
        if not (np.isfinite(T).all() and np.isfinite(R).all()):
            raise DomainError("tables must be finite")
        object.__setattr__(self, "transitions", T)
        object.__setattr__(self, "rewards", R)
        if self.terminal is not None:
            term = np.asarray(self.terminal, dtype=bool)
            if term.shape != T.shape:
                raise DomainError("terminal mask must match the transition table")
            object.__setattr__(self, "terminal", term)

    @classmethod
    def deterministic(cls, next_state, rewards, terminal=None):
        """Build from ``next_state[s, a]`` and ``rewards[s, a]`` (terminal flags per ``(s, a)``)."""
        nxt = np.asarray(next_state)
        S, A = nxt.shape
        T = np.zeros((S, A, S))
        T[np.arange(S)[:, None], np.arange(A)[None, :], nxt] = 1.0
        term = None
        if terminal is not None:
            term = T.astype(bool) & np.asarray(terminal, dtype=bool)[:, :, None]
        return cls(T, rewards, term)


def bellman_backup(mdp: ExplicitMDP, q: np.ndarray, gamma: float) -> np.ndarray:
    v = q.max(axis=1)
    cont = mdp.transitions if mdp.terminal is None else np.where(mdp.terminal, 0.0, mdp.transitions)
    return mdp.rewards + gamma * cont @ v


def value_iteration(mdp: ExplicitMDP, gamma: float, tolerance: float = 1e-10, max_sweeps: int = 100_000) -> QTable:
    """Optimal action values by repeated Bellman backups until the sup-norm change drops below ``tolerance``."""
    if not 0 <= gamma < 1:
        raise DomainError("gamma must lie in [0, 1)")
    if tolerance <= 0:
        raise DomainError("tolerance must be positive")
    q = np.zeros_like(mdp.rewards)
    for _ in range(max_sweeps):
        new = bellman_backup(mdp, q, gamma)
        delta = np.abs(new - q).max()
        q = new
        # residual of the returned table is at most gamma * delta
        if gamma * delta < tolerance:
            break
    S, A = q.shape
    return QTable(S, A, q)


# -- checkpoints ------------------------------------------------------------

def save_tables(path, tables) -> None:
    """Write one or more equally shaped tables to an ``.npz`` checkpoint."""
    values = np.stack([t.values for t in tables])
    with open(Path(path), "wb") as fh:
        np.savez(fh, shape=np.array(values.shape, dtype=np.int64), values=values)


def load_tables(path) -> list[QTable]:
    with np.load(Path(path)) as data:
        values = data["values"]
        if tuple(data["shape"]) != values.shape:
            raise DomainError(f"{path}: checkpoint shape header does not match its payload")
    return [QTable(v.shape[0], v.shape[1], v) for v in values]
