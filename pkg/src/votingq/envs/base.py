from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import UsageError


@dataclass(frozen=True)
class EnvStep:
    observation: int
    reward: float
    done: bool
    truncated: bool = False


@dataclass(frozen=True)
class TabularDynamics:
    """Deterministic dynamics flattened into arrays for the compiled training loop.

    ``terminal[s, a]`` marks transitions that end the episode. Their reward is
    ``reward[s, a]``, or, when ``timed_reward`` is set, the success reward
    ``1 - 0.9 * step_count / episode_cap``. Non-terminal transitions pay
    nothing. Episodes are truncated after ``episode_cap`` steps.
    """

    next_state: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray
    start_states: np.ndarray
    start_cdf: np.ndarray
    episode_cap: int
    timed_reward: bool

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]


def sample_index(cdf: np.ndarray, u: float) -> int:
    """Inverse-CDF draw: first index whose cumulative probability exceeds ``u``."""
    i = int(np.searchsorted(cdf, u, side="right"))
    return min(i, len(cdf) - 1)


def success_reward(step_count: int, max_steps: int) -> float:
    return 1.0 - 0.9 * (step_count / max_steps)


class EpisodeMixin:
    """Tracks step counts and refuses to step a finished episode."""

    _finished = True
    step_count = 0

    def _begin(self):
        self._finished = False
        self.step_count = 0

    def _guard(self):
        if self._finished:
            raise UsageError("episode is over; call reset() first")

    def _finish(self, step: EnvStep) -> EnvStep:
        if step.done or step.truncated:
            self._finished = True
        return step
