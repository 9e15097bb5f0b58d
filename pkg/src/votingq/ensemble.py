"""Ensemble Q-learning agents whose heads vote on actions.

Each head is an independent Q-table. At decision time every head turns its
row of action values into a ballot (raw values or their softmax), a committee
of actions is elected, and the action is drawn uniformly from the committee.
With probability epsilon the election is skipped and a uniformly random
action is played instead.

The classic aggregation policies (majority voting, rank voting, averaging,
bootstrapped heads, Boltzmann addition) are implemented separately in
:func:`classic_policy` without any election machinery; they serve as
independent references for the rule equivalences.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax as _softmax
from scipy.stats import rankdata
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernel
from .exceptions import ConfigurationError, DomainError
from .qcore import LearningParams, LinearSchedule, QTable, TransitionSample, epsilon_at, q_update
from .votecore import (
    LOWEST_INDEX,
    Committee,
    RuleKind,
    ScoringRule,
    TieBreakPolicy,
    UtilityProfile,
    elect_threshold,
    elect_topk,
)


class PolicyKind(str, enum.Enum):
    MAJORITY_VOTING = "majority_voting"
    RANK_VOTING = "rank_voting"
    AVERAGE = "average"
    BOOTSTRAPPED = "bootstrapped"
    BOLTZMANN_ADDITION = "boltzmann_addition"
    COMMITTEE = "committee"

    @classmethod
    def parse(cls, name) -> "PolicyKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        key = {"majority": "majority_voting", "rank": "rank_voting", "mean": "average",
               "bootstrap": "bootstrapped", "boltzmann": "boltzmann_addition"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"unknown policy {name!r} (choose from {choices})") from None


# single-winner rule that each classic deterministic policy corresponds to
EQUIVALENT_RULE = {
    PolicyKind.MAJORITY_VOTING: RuleKind.PLURALITY,
    PolicyKind.RANK_VOTING: RuleKind.BORDA,
    PolicyKind.AVERAGE: RuleKind.JUDGE,
    PolicyKind.BOOTSTRAPPED: RuleKind.LOTTERY,
}

UTILITY_MODES = ("raw", "softmax")

# RNG roles; each gets its own stream derived from the run seed
ROLES = {"layout": 0, "dynamics": 1, "init": 2, "action": 3, "agent": 4, "mask": 5}


def role_rng(seed: int, role: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(ROLES[role], *extra)))


def role_seed(seed: int, role: str) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(ROLES[role],)).generate_state(1)[0])


def init_heads(n_heads: int, n_states: int, n_actions: int, seed: int, scale: float = 0.01) -> list[QTable]:
    """Independent ``Uniform(-scale, scale)`` tables, one stream per head."""
    return [QTable.random(n_states, n_actions, role_rng(seed, "init", i), -scale, scale)
            for i in range(n_heads)]


@dataclass
class EnsembleAgent:
    """Reference (pure Python) ensemble agent.

    ``policy`` selects a classic aggregation or ``COMMITTEE``, in which case
    ``rule`` and ``s_thresh`` drive the dynamic-size election.
    """

    heads: list[QTable]
    policy: PolicyKind = PolicyKind.COMMITTEE
    rule: RuleKind | None = RuleKind.JUDGE
    s_thresh: float = 0.0
    params: LearningParams = field(default_factory=LearningParams)
    tiebreak: TieBreakPolicy = LOWEST_INDEX
    utility_mode: str = "raw"
    update_prob: float | None = None
    bootstrap_head: int = 0

    def __post_init__(self):
        self.policy = PolicyKind.parse(self.policy)
        if not self.heads:
            raise ConfigurationError("an ensemble needs at least one head")
        shape = self.heads[0].values.shape
        if any(h.values.shape != shape for h in self.heads):
            raise ConfigurationError("all heads must share the same dimensions")
        if self.utility_mode not in UTILITY_MODES:
            raise ConfigurationError(f"utility_mode must be one of {UTILITY_MODES}")
        if self.policy is PolicyKind.COMMITTEE:
            if self.rule is None:
                raise ConfigurationError("committee policy needs a rule")
            self.rule = RuleKind.parse(self.rule) if isinstance(self.rule, str) else self.rule
            if self.s_thresh < 0:
                raise ConfigurationError("s_thresh must be >= 0")
            if self.rule is RuleKind.LOTTERY and self.s_thresh != 0:
                raise ConfigurationError("the lottery rule only supports s_thresh = 0")
        if self.update_prob is not None and not 0 <= self.update_prob <= 1:
            raise ConfigurationError("update_prob must lie in [0, 1]")
        if not 0 <= self.bootstrap_head < self.k:
            raise ConfigurationError("bootstrap_head out of range")

    @property
    def k(self) -> int:
        return len(self.heads)

    @property
    def n_actions(self) -> int:
        return self.heads[0].action_count

    @property
    def n_states(self) -> int:
        return self.heads[0].state_count

    def values(self, state: int) -> np.ndarray:
        if not 0 <= state < self.n_states:
            raise DomainError(f"state {state} out of range")
        return np.stack([h.values[state] for h in self.heads])

    def scoring_rule(self) -> ScoringRule:
        voter = self.bootstrap_head if self.rule is RuleKind.LOTTERY else None
        return ScoringRule(self.rule, voter)

    def committee(self, state: int) -> Committee:
        """The committee elected at ``state`` (committee policy only)."""
        if self.policy is not PolicyKind.COMMITTEE:
            raise ConfigurationError("only the committee policy holds elections")
        return elect_threshold(self.scoring_rule(), utilities(self, state), self.s_thresh, self.tiebreak)

    def act(self, state: int, t: int, rng: np.random.Generator) -> int:
        """Epsilon-soft action at global step ``t``; consumes exactly two uniforms from ``rng``."""
        explore, pick = rng.random(), rng.random()
        m = self.n_actions
        if explore < epsilon_at(self.params.epsilon, t):
            return int(math.floor(pick * m))
        if self.policy is PolicyKind.COMMITTEE:
            members = self.committee(state).members
            return members[int(math.floor(pick * len(members)))]
        if self.policy is PolicyKind.BOLTZMANN_ADDITION:
            probs = classic_policy(self.policy, self, state)
            return _inverse_cdf(probs, pick)
        return classic_policy(self.policy, self, state)

    def observe(self, sample: TransitionSample, rng: np.random.Generator | None = None) -> None:
        """Q-learning update on every head (heads masked out by the Bernoulli draw are skipped)."""
        for head in self.heads:
            if self.update_prob is not None and not rng.random() < self.update_prob:
                continue
            q_update(head, sample, self.params)

    def end_episode(self, rng: np.random.Generator) -> int:
        self.bootstrap_head = int(math.floor(rng.random() * self.k))
        return self.bootstrap_head


def _inverse_cdf(probs, uniform) -> int:
    cum = 0.0
    for a, p in enumerate(probs):
        cum += p
        if uniform < cum:
            return a
    return len(probs) - 1


def utilities(agent: EnsembleAgent, state: int) -> UtilityProfile:
    """Ballots of all heads at ``state``: raw Q-values or their per-head softmax."""
    q = agent.values(state)
    if agent.utility_mode == "softmax":
        shifted = np.exp(q - q.max(axis=1, keepdims=True))
        q = shifted / shifted.sum(axis=1, keepdims=True)
    return UtilityProfile(q)


def classic_policy(kind: PolicyKind, agent: EnsembleAgent, state: int):
    """Aggregate the heads' values at ``state`` the classic way.

    Returns an action index, or a probability vector for Boltzmann addition.
    Ties go to the lowest action index.
    """
    kind = PolicyKind.parse(kind)
    q = agent.values(state)
    k, m = q.shape
    if kind is PolicyKind.MAJORITY_VOTING:
        votes = np.bincount(q.argmax(axis=1), minlength=m)
        return int(votes.argmax())
    if kind is PolicyKind.RANK_VOTING:
        # ordinal ranks with ties resolved by position, then preference |A| - rank
        ranks = np.vstack([rankdata(-row, method="ordinal") for row in q])
        return int((m - ranks).sum(axis=0).argmax())
    if kind is PolicyKind.AVERAGE:
        return int(q.mean(axis=0).argmax())
    if kind is PolicyKind.BOOTSTRAPPED:
        if not 0 <= agent.bootstrap_head < k:
            raise ConfigurationError("bootstrapped policy needs a valid bootstrap head")
        return int(q[agent.bootstrap_head].argmax())
    if kind is PolicyKind.BOLTZMANN_ADDITION:
        return _softmax(q, axis=1).mean(axis=0)
    raise ConfigurationError(f"{kind.value} is not a classic policy")


# -- training loops ---------------------------------------------------------

@dataclass
class TrainingResult:
    heads: list[QTable]
    episode_steps: np.ndarray
    episode_returns: np.ndarray


def train_reference(agent: EnsembleAgent, env, total_steps: int, seed: int) -> TrainingResult:
    """Step-by-step training loop with the Python agent and environment.

    Slow; the compiled path in :class:`EnsembleQLearner` reproduces it exactly.
    """
    rng_env = role_rng(seed, "dynamics")
    rng_action = role_rng(seed, "action")
    rng_agent = role_rng(seed, "agent")
    rng_mask = role_rng(seed, "mask")
    steps, returns = [], []
    t = 0
    while t < total_steps:
        agent.end_episode(rng_agent)
        s = env.reset(rng_env)
        ret = 0.0
        while True:
            a = agent.act(s, t, rng_action)
            out = env.step(a)
            agent.observe(TransitionSample(s, a, out.reward, out.observation, out.done), rng_mask)
            ret += out.reward
            t += 1
            s = out.observation
            if out.done or out.truncated:
                steps.append(t)
                returns.append(ret)
                break
            if t >= total_steps:
                break
    return TrainingResult(agent.heads, np.array(steps, dtype=np.int64), np.array(returns))


def train_compiled(agent: EnsembleAgent, env, total_steps: int, seed: int) -> TrainingResult:
    """Same loop as :func:`train_reference`, run by the compiled kernel on tabulated dynamics."""
    if agent.tiebreak != LOWEST_INDEX:
        raise ConfigurationError("the compiled loop only supports lowest-index tie-breaking")
    dyn = env.tabulate()
    k, S, m = agent.k, agent.n_states, agent.n_actions
    if (dyn.n_states, dyn.n_actions) != (S, m):
        raise ConfigurationError(f"agent tables {S}x{m} do not match the environment {dyn.n_states}x{dyn.n_actions}")
    q = np.stack([h.values for h in agent.heads])
    mode, rule, s_thresh = _decision_mode(agent)
    u_action = role_rng(seed, "action").random((total_steps, 2))
    u_start = role_rng(seed, "dynamics").random(total_steps)
    u_head = role_rng(seed, "agent").random(total_steps)
    if agent.update_prob is None:
        u_mask, p = np.zeros((1, 1)), -1.0
    else:
        u_mask, p = role_rng(seed, "mask").random((total_steps, k)), float(agent.update_prob)
    eps = agent.params.epsilon
    steps, returns, last_head = _kernel.train(
        dyn.next_state, dyn.reward, dyn.terminal, dyn.start_states, dyn.start_cdf,
        dyn.episode_cap, dyn.timed_reward, q, mode, rule, float(s_thresh),
        agent.utility_mode == "softmax", agent.params.alpha, agent.params.gamma,
        eps.start, eps.end, eps.anneal_steps, total_steps, u_action, u_start, u_head, u_mask, p)
    for i, head in enumerate(agent.heads):
        head.values[:] = q[i]
    agent.bootstrap_head = int(last_head)
    return TrainingResult(agent.heads, steps, returns)


_RULE_CODES = {
    RuleKind.PLURALITY: _kernel.PLURALITY,
    RuleKind.BLOC: _kernel.BLOC,
    RuleKind.CCR: _kernel.CCR,
    RuleKind.BORDA: _kernel.BORDA,
    RuleKind.JUDGE: _kernel.JUDGE,
    RuleKind.LOTTERY: _kernel.LOTTERY,
}


def _decision_mode(agent: EnsembleAgent):
    if agent.policy is PolicyKind.COMMITTEE:
        return _kernel.MODE_THRESHOLD, _RULE_CODES[agent.rule], agent.s_thresh
    if agent.policy is PolicyKind.BOLTZMANN_ADDITION:
        if agent.utility_mode != "raw":
            raise ConfigurationError("Boltzmann addition applies its own softmax; use raw utilities")
        return _kernel.MODE_BOLTZMANN, 0, 0.0
    return _kernel.MODE_TOP1, _RULE_CODES[EQUIVALENT_RULE[agent.policy]], 0.0


# -- estimator front end ----------------------------------------------------

class EnsembleQLearner(BaseEstimator):
    """Train a voting ensemble of tabular Q-learners on an environment.

    Parameters mirror the agent configuration block of an experiment:
    ``policy`` is one of :class:`PolicyKind`; for ``"committee"`` the
    ``rule`` and ``s_thresh`` define the election. ``fit(env)`` runs
    ``total_steps`` environment steps and stores the learned heads in
    ``q_tables_`` and the completed episodes in ``episode_steps_`` /
    ``episode_returns_``.

    Examples
    --------
    >>> from votingq.envs import CorridorEnv
    >>> learner = EnsembleQLearner(policy="committee", rule="ccr", s_thresh=68,
    ...                            total_steps=2000, anneal_steps=1000)
    >>> learner.fit(CorridorEnv(n_actions=10)).q_tables_.shape
    (10, 50, 10)
    """

    def __init__(self, policy="committee", rule="judge", s_thresh=0.0, n_heads=10, alpha=0.2, gamma=0.9,
                 epsilon_start=1.0, epsilon_end=0.001, anneal_steps=1_000_000, utility_mode="raw",
                 update_prob=None, init_scale=0.01, total_steps=100_000, backend="compiled",
                 random_state=0):
        self.policy = policy
        self.rule = rule
        self.s_thresh = s_thresh
        self.n_heads = n_heads
        self.alpha = alpha
        self.gamma = gamma
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.anneal_steps = anneal_steps
        self.utility_mode = utility_mode
        self.update_prob = update_prob
        self.init_scale = init_scale
        self.total_steps = total_steps
        self.backend = backend
        self.random_state = random_state

    def _seed(self) -> int:
        return 0 if self.random_state is None else int(self.random_state)

    def make_agent(self, n_states: int, n_actions: int) -> EnsembleAgent:
        if self.n_heads < 1:
            raise ConfigurationError("n_heads must be >= 1")
        policy = PolicyKind.parse(self.policy)
        rule = RuleKind.parse(self.rule) if policy is PolicyKind.COMMITTEE else None
        params = LearningParams(self.alpha, self.gamma,
                                LinearSchedule(self.epsilon_start, self.epsilon_end, int(self.anneal_steps)))
        heads = init_heads(self.n_heads, n_states, n_actions, self._seed(), self.init_scale)
        return EnsembleAgent(heads, policy, rule, float(self.s_thresh), params,
                             utility_mode=self.utility_mode, update_prob=self.update_prob)

    def fit(self, env, y=None, init_tables=None):
        """Train on ``env``; ``init_tables`` (heads x states x actions) replaces the random initialisation."""
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be >= 1")
        agent = self.make_agent(env.n_states, env.n_actions)
        if init_tables is not None:
            init = np.asarray(init_tables, dtype=float)
            if init.shape != (agent.k, agent.n_states, agent.n_actions):
                raise ConfigurationError(f"initial tables have shape {init.shape}, expected "
                                         f"{(agent.k, agent.n_states, agent.n_actions)}")
            for head, values in zip(agent.heads, init):
                head.values[:] = values
        if self.backend == "compiled":
            result = train_compiled(agent, env, int(self.total_steps), self._seed())
        elif self.backend == "python":
            result = train_reference(agent, env, int(self.total_steps), self._seed())
        else:
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        self.agent_ = agent
        self.q_tables_ = np.stack([h.values for h in agent.heads])
        self.episode_steps_ = result.episode_steps
        self.episode_returns_ = result.episode_returns
        self.n_states_, self.n_actions_ = agent.n_states, agent.n_actions
        return self

    def predict(self, states, random_state=None):
        """Greedy (epsilon = 0) actions, sampled uniformly from each state's committee."""
        check_is_fitted(self, "agent_")
        states = np.atleast_1d(np.asarray(states, dtype=np.int64))
        if states.ndim != 1 or (states < 0).any() or (states >= self.n_states_).any():
            raise DomainError("states must be a 1-d array of valid state indices")
        rng = np.random.default_rng(random_state)
        greedy = EnsembleAgent([h.copy() for h in self.agent_.heads], self.agent_.policy, self.agent_.rule,
                               self.agent_.s_thresh, LearningParams(self.alpha, self.gamma, LinearSchedule(0.0, 0.0, 1)),
                               utility_mode=self.agent_.utility_mode, bootstrap_head=self.agent_.bootstrap_head)
        return np.array([greedy.act(int(s), 0, rng) for s in states], dtype=np.int64)

    def committees(self, states) -> list[Committee]:
        check_is_fitted(self, "agent_")
        return [self.agent_.committee(int(s)) for s in np.atleast_1d(states)]
