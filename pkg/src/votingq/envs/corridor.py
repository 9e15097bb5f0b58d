"""Corridor MDP: a chain of states with two rewarding ends and many dead actions.

States are labelled ``0 .. n_states - 1`` (``0`` is the low-reward end,
``n_states - 1`` the high-reward end). In every state exactly one action moves
left, one moves right and the remaining ``m - 2`` leave the state unchanged.
Which action indices are operational is drawn once per environment from the
layout seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from ..exceptions import ConfigurationError, DomainError
from ..qcore import ExplicitMDP
from .base import EnvStep, EpisodeMixin, TabularDynamics, sample_index


@dataclass(frozen=True)
class CorridorConfig:
    n_actions: int = 10
    n_states: int = 50
    episode_cap: int = 100
    start_n: int = 49
    start_p: float = 0.2
    reward_low: float = 0.1
    reward_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_actions < 2:
            raise ConfigurationError("corridor needs at least 2 actions")
        if self.n_states < 3:
            raise ConfigurationError("corridor needs at least 3 states")
        if not 0 <= self.start_p <= 1:
            raise ConfigurationError("start_p must lie in [0, 1]")
        if not 0 <= self.start_n <= self.n_states - 1:
            raise ConfigurationError("start_n must lie in [0, n_states - 1]")
        if self.episode_cap < 1:
            raise ConfigurationError("episode_cap must be positive")


def corridor_layout(config: CorridorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Operational ``(left, right)`` action index per state."""
    rng = np.random.default_rng(config.seed)
    left = np.empty(config.n_states, dtype=np.int64)
    right = np.empty(config.n_states, dtype=np.int64)
    for s in range(config.n_states):
        left[s], right[s] = rng.choice(config.n_actions, size=2, replace=False)
    return left, right


def start_distribution(config: CorridorConfig) -> np.ndarray:
    """Cumulative start-state probabilities (state ``i`` with ``i ~ Binomial(start_n, start_p)``)."""
    pmf = np.zeros(config.n_states)
    pmf[: config.start_n + 1] = binom.pmf(np.arange(config.start_n + 1), config.start_n, config.start_p)
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return cdf


def corridor_reset(config: CorridorConfig, rng: np.random.Generator) -> int:
    return sample_index(start_distribution(config), rng.random())


class CorridorEnv(EpisodeMixin):
    def __init__(self, config: CorridorConfig | None = None, **kwargs):
        self.config = config if config is not None else CorridorConfig(**kwargs)
        self.left, self.right = corridor_layout(self.config)
        self._start_cdf = start_distribution(self.config)
        self.state = None

    @property
    def n_states(self):
        return self.config.n_states

    @property
    def n_actions(self):
        return self.config.n_actions

    def encode_state(self, state: int) -> int:
        return int(state)

    def decode_state(self, index: int) -> int:
        return int(index)

    def reset(self, rng: np.random.Generator) -> int:
        self._begin()
        self.state = sample_index(self._start_cdf, rng.random())
        return self.state

    def transition(self, state: int, action: int) -> tuple[int, float, bool]:
        """Pure dynamics: ``(next_state, reward, done)``."""
        cfg = self.config
        if not 0 <= state < cfg.n_states or not 0 <= action < cfg.n_actions:
            raise DomainError(f"invalid state/action ({state}, {action})")
        nxt = state
        if action == self.left[state]:
            nxt = max(state - 1, 0)
        elif action == self.right[state]:
            nxt = min(state + 1, cfg.n_states - 1)
        if nxt == 0:
            return nxt, cfg.reward_low, True
        if nxt == cfg.n_states - 1:
            return nxt, cfg.reward_high, True
        return nxt, 0.0, False

    def step(self, action: int) -> EnvStep:
        self._guard()
        self.state, reward, done = self.transition(self.state, action)
        self.step_count += 1
        truncated = not done and self.step_count >= self.config.episode_cap
        return self._finish(EnvStep(self.state, reward, done, truncated))

    def tabulate(self) -> TabularDynamics:
        S, A = self.n_states, self.n_actions
        nxt = np.empty((S, A), dtype=np.int64)
        rew = np.zeros((S, A))
        term = np.zeros((S, A), dtype=bool)
        for s in range(S):
            for a in range(A):
                nxt[s, a], rew[s, a], term[s, a] = self.transition(s, a)
        return TabularDynamics(nxt, rew, term, np.arange(S, dtype=np.int64), self._start_cdf,
                               self.config.episode_cap, False)

    def explicit_mdp(self) -> ExplicitMDP:
        tab = self.tabulate()
        return ExplicitMDP.deterministic(tab.next_state, tab.reward, tab.terminal)

    def describe(self) -> str:
        cfg = self.config
        lines = [
            f"corridor: {cfg.n_states} states, {cfg.n_actions} actions, cap {cfg.episode_cap} steps",
            f"start: state i ~ Binomial({cfg.start_n}, {cfg.start_p})",
            f"rewards: state 0 -> {cfg.reward_low}, state {cfg.n_states - 1} -> {cfg.reward_high} (terminal)",
            f"state-space size: {cfg.n_states}",
            "operational actions (state: left/right):",
        ]
        lines += [f"  {s:3d}: {self.left[s]}/{self.right[s]}" for s in range(cfg.n_states)]
        return "\n".join(lines)
