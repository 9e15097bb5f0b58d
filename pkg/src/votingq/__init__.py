"""Committee-voting ensemble Q-learning.

Multi-winner voting rules (plurality/SNTV, Bloc, Chamberlin-Courant, Borda,
majority judgment, lottery) used to aggregate the action preferences of an
ensemble of tabular Q-learners, plus environments and an experiment harness.
"""

from .ensemble import EnsembleAgent, EnsembleQLearner, PolicyKind
from .exceptions import (
    CapacityError,
    ConfigurationError,
    DomainError,
    ParseError,
    UsageError,
    VotingQError,
)
from .qcore import ExplicitMDP, LearningParams, LinearSchedule, QTable, q_update, value_iteration
from .votecore import (
    LOWEST_INDEX,
    Committee,
    CommitteeElection,
    RuleKind,
    ScoringRule,
    TieBreakPolicy,
    UtilityProfile,
    elect_bruteforce,
    elect_threshold,
    elect_topk,
    score_committee,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "Committee", "CommitteeElection", "ConfigurationError", "DomainError", "EnsembleAgent",
    "EnsembleQLearner", "ExplicitMDP", "LOWEST_INDEX", "LearningParams", "LinearSchedule", "ParseError",
    "PolicyKind", "QTable", "RuleKind", "ScoringRule", "TieBreakPolicy", "UsageError", "UtilityProfile",
    "VotingQError", "elect_bruteforce", "elect_threshold", "elect_topk", "q_update", "score_committee",
    "value_iteration",
]
