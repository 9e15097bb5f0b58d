"""Committee scoring rules and committee elections.

Voters are rows of a utility matrix, candidates are columns. A committee
scoring rule assigns every voter a satisfaction ``f(mu_i, W)`` for a committee
``W``; the committee's score is the sum over voters. Three election procedures
are provided:

* :func:`elect_threshold` -- greedy growth until the score exceeds a
  satisfaction threshold (dynamic committee resizing),
* :func:`elect_topk` -- greedy growth to a fixed size,
* :func:`elect_bruteforce` -- exhaustive search, used as an exact oracle.

All functions are pure; profiles and committees are immutable.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import CapacityError, ConfigurationError, DomainError, ParseError

BRUTEFORCE_LIMIT = 10**6


class RuleKind(str, enum.Enum):
    PLURALITY = "plurality"
    BLOC = "bloc"
    CCR = "ccr"
    BORDA = "borda"
    JUDGE = "judge"
    LOTTERY = "lottery"

    @classmethod
    def parse(cls, name: str) -> "RuleKind":
        key = name.strip().lower().replace("-", "_")
        key = _RULE_ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"unknown rule {name!r} (choose from {choices})") from None

    @property
    def ordinal(self) -> bool:
        """True if the rule only looks at rank positions."""
        return self in (RuleKind.PLURALITY, RuleKind.BLOC, RuleKind.CCR, RuleKind.BORDA)


_RULE_ALIASES = {
    "sntv": "plurality",
    "chamberlin_courant": "ccr",
    "chamberlincourant": "ccr",
    "majority_judgment": "judge",
    "majorityjudgment": "judge",
    "majority_judgement": "judge",
    "random_ballot": "lottery",
}


@dataclass(frozen=True)
class UtilityProfile:
    """Voter x candidate utility matrix.

    Rank positions are derived from the utilities on demand; higher utility
    means a smaller (better) rank, and equal utilities are ranked by
    candidate index.
    """

    utilities: np.ndarray

    def __post_init__(self):
        u = check_array(self.utilities, dtype=np.float64, ensure_min_samples=1,
                        ensure_min_features=1, copy=True)
        u.setflags(write=False)
        object.__setattr__(self, "utilities", u)

    @property
    def n_voters(self) -> int:
        return self.utilities.shape[0]

    @property
    def n_candidates(self) -> int:
        return self.utilities.shape[1]

    @cached_property
    def positions(self) -> np.ndarray:
        """``positions[i, a]`` is voter i's rank of candidate a, in ``1..m``."""
        order = np.argsort(-self.utilities, axis=1, kind="stable")
        pos = np.empty_like(order)
        rows = np.arange(self.n_voters)[:, None]
        pos[rows, order] = np.arange(1, self.n_candidates + 1)
        pos.setflags(write=False)
        return pos

    @cached_property
    def satisfaction(self) -> np.ndarray:
        """Borda-style satisfaction ``m - pos``, in ``0..m-1``."""
        beta = self.n_candidates - self.positions
        beta.setflags(write=False)
        return beta


@dataclass(frozen=True)
class ScoringRule:
    kind: RuleKind
    lottery_voter: int | None = None

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, RuleKind) else RuleKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if (kind is RuleKind.LOTTERY) != (self.lottery_voter is not None):
            raise ConfigurationError("lottery_voter must be given exactly when the rule is lottery")
        if self.lottery_voter is not None and self.lottery_voter < 0:
            raise ConfigurationError("lottery_voter must be non-negative")

    def check(self, profile: UtilityProfile) -> None:
        if self.lottery_voter is not None and self.lottery_voter >= profile.n_voters:
            raise ConfigurationError(
                f"lottery_voter {self.lottery_voter} out of range for {profile.n_voters} voters")


@dataclass(frozen=True)
class Committee:
    """Elected candidates in election order, with the committee's total score."""

    members: tuple[int, ...]
    score: float

    def __post_init__(self):
        members = tuple(int(a) for a in self.members)
        if len(set(members)) != len(members) or any(a < 0 for a in members):
            raise DomainError(f"committee members must be distinct candidate indices, got {members}")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def __contains__(self, candidate):
        return candidate in self.members

    @property
    def member_set(self) -> frozenset[int]:
        return frozenset(self.members)


@dataclass(frozen=True)
class TieBreakPolicy:
    kind: str = "lowest"
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("lowest", "random"):
            raise ConfigurationError(f"unknown tie-break {self.kind!r}")
        if (self.kind == "random") != (self.seed is not None):
            raise ConfigurationError("tie-break seed must be given exactly for the 'random' policy")

    @classmethod
    def lowest(cls) -> "TieBreakPolicy":
        return cls("lowest")

    @classmethod
    def seeded(cls, seed: int) -> "TieBreakPolicy":
        return cls("random", int(seed))

    def chooser(self):
        """Return a fresh ``pick(tied_indices) -> index`` callable for one election."""
        if self.kind == "lowest":
            return lambda tied: int(tied[0])
        rng = np.random.default_rng(self.seed)

        def pick(tied):
            if len(tied) == 1:
                return int(tied[0])
            return int(tied[rng.integers(len(tied))])

        return pick


LOWEST_INDEX = TieBreakPolicy.lowest()


def _seqsum(values) -> float:
    # left-to-right accumulation; np.sum switches to pairwise summation for
    # longer vectors, which would make scores depend on the numpy build
    total = 0.0
    for v in values:
        total += float(v)
    return total


def rank_positions(profile: UtilityProfile, voter: int) -> np.ndarray:
    """Ranks ``1..m`` of every candidate for one voter (1 = most preferred)."""
    if not 0 <= voter < profile.n_voters:
        raise DomainError(f"voter {voter} out of range for {profile.n_voters} voters")
    return profile.positions[voter].copy()


def voter_scores(rule: ScoringRule, profile: UtilityProfile, members, window: int | None = None) -> np.ndarray:
    """Per-voter satisfaction ``f(mu_i, W)``.

    ``window`` replaces ``|W|`` as the Bloc approval depth; the fixed-size
    election uses it to score partial committees against the final size.
    """
    members = [int(a) for a in members]
    if not members:
        raise DomainError("committee must be non-empty")
    m = profile.n_candidates
    if min(members) < 0 or max(members) >= m or len(set(members)) != len(members):
        raise DomainError(f"invalid committee {members} for {m} candidates")
    rule.check(profile)
    kind = rule.kind
    if kind is RuleKind.PLURALITY:
        return (profile.positions[:, members] == 1).any(axis=1).astype(np.float64)
    if kind is RuleKind.BLOC:
        depth = len(members) if window is None else window
        return (profile.positions[:, members] <= depth).sum(axis=1).astype(np.float64)
    if kind is RuleKind.CCR:
        return profile.satisfaction[:, members].max(axis=1).astype(np.float64)
    if kind is RuleKind.BORDA:
        return profile.satisfaction[:, members].sum(axis=1).astype(np.float64)
    if kind is RuleKind.JUDGE:
        # summed in member order, so greedy scores can be accumulated incrementally
        acc = profile.utilities[:, members[0]].copy()
        for a in members[1:]:
            acc += profile.utilities[:, a]
        return acc
    if kind is RuleKind.LOTTERY:
        out = np.zeros(profile.n_voters)
        out[rule.lottery_voter] = profile.utilities[rule.lottery_voter, members].max()
        return out
    raise AssertionError(kind)


def score_committee(rule: ScoringRule, profile: UtilityProfile, committee, window: int | None = None) -> float:
    """Total score ``sum_i f(mu_i, W)``; ``committee`` is a Committee or an iterable of indices."""
    members = committee.members if isinstance(committee, Committee) else committee
    return _seqsum(voter_scores(rule, profile, members, window))


def _greedy(rule, profile, tiebreak, stop, window=None):
    rule.check(profile)
    pick = tiebreak.chooser()
    m = profile.n_candidates
    members: list[int] = []
    while True:
        remaining = [a for a in range(m) if a not in members]
        gains = np.array([score_committee(rule, profile, members + [a], window) for a in remaining])
        best = gains.max()
        tied = [a for a, g in zip(remaining, gains) if g == best]
        members.append(pick(tied))
        score = score_committee(rule, profile, members)
        if len(members) == m or stop(members, score):
            return Committee(tuple(members), score)


def elect_topk(rule: ScoringRule, profile: UtilityProfile, n: int, tiebreak: TieBreakPolicy = LOWEST_INDEX) -> Committee:
    """Greedy election of exactly ``n`` candidates.

    Optimal for Plurality, Borda, Majority Judgment and Bloc; within a factor
    ``1 - 1/e`` of optimal for Chamberlin-Courant.
    """
    if not 1 <= n <= profile.n_candidates:
        raise DomainError(f"committee size {n} out of range 1..{profile.n_candidates}")
    if rule.kind is RuleKind.LOTTERY and n != 1:
        raise ConfigurationError("the lottery rule only elects single winners")
    window = n if rule.kind is RuleKind.BLOC else None
    return _greedy(rule, profile, tiebreak, lambda w, s: len(w) >= n, window)


def elect_threshold(rule: ScoringRule, profile: UtilityProfile, s_thresh: float,
                    tiebreak: TieBreakPolicy = LOWEST_INDEX) -> Committee:
    """Grow a committee greedily until its score exceeds ``s_thresh`` or it holds every candidate.

    At least one candidate is always elected. The lottery rule is single-winner
    only and accepts ``s_thresh == 0`` exclusively.
    """
    if not s_thresh >= 0:
        raise DomainError(f"s_thresh must be >= 0, got {s_thresh}")
    if rule.kind is RuleKind.LOTTERY:
        if s_thresh != 0:
            raise ConfigurationError("the lottery rule only supports s_thresh = 0")
        return elect_topk(rule, profile, 1, tiebreak)
    return _greedy(rule, profile, tiebreak, lambda w, s: s > s_thresh)


def elect_bruteforce(rule: ScoringRule, profile: UtilityProfile, n: int) -> Committee:
    """Exact election by enumerating every ``n``-subset.

    Ties go to the lexicographically smallest sorted member list.
    """
    m = profile.n_candidates
    if not 1 <= n <= m:
        raise DomainError(f"committee size {n} out of range 1..{m}")
    if math.comb(m, n) > BRUTEFORCE_LIMIT:
        raise CapacityError(f"C({m}, {n}) = {math.comb(m, n)} committees exceeds {BRUTEFORCE_LIMIT}")
    if rule.kind is RuleKind.LOTTERY and n != 1:
        raise ConfigurationError("the lottery rule only elects single winners")
    best, best_score = None, -math.inf
    for subset in itertools.combinations(range(m), n):
        s = score_committee(rule, profile, subset)
        if s > best_score:
            best, best_score = subset, s
    return Committee(tuple(best), best_score)


def winning_scores(rule: ScoringRule, profile: UtilityProfile, tiebreak: TieBreakPolicy = LOWEST_INDEX) -> np.ndarray:
    """Greedy winning score for every committee size ``0..m`` (index 0 is the empty committee)."""
    m = profile.n_candidates
    out = np.zeros(m + 1)
    for n in range(1, m + 1):
        out[n] = elect_topk(rule, profile, n, tiebreak).score
    return out


class CommitteeElection(BaseEstimator):
    """Estimator-style front end to the elections.

    ``fit(X)`` takes a (voters x candidates) utility matrix and stores the
    winning committee. With ``threshold`` set the committee size is dynamic,
    otherwise exactly ``n_winners`` candidates are elected.

    Examples
    --------
    >>> X = [[3, 2, 1], [3, 2, 1], [1, 2, 3]]
    >>> CommitteeElection(rule="ccr", n_winners=2).fit(X).members_
    array([0, 2])
    """

    def __init__(self, rule="ccr", n_winners=1, threshold=None, tiebreak="lowest",
                 random_state=None, lottery_voter=None):
        self.rule = rule
        self.n_winners = n_winners
        self.threshold = threshold
        self.tiebreak = tiebreak
        self.random_state = random_state
        self.lottery_voter = lottery_voter

    def _rule(self):
        return ScoringRule(RuleKind.parse(self.rule) if isinstance(self.rule, str) else self.rule,
                           self.lottery_voter)

    def _tiebreak(self):
        if self.tiebreak == "lowest":
            return LOWEST_INDEX
        if self.tiebreak == "random":
            seed = 0 if self.random_state is None else int(self.random_state)
            return TieBreakPolicy.seeded(seed)
        raise ConfigurationError(f"unknown tie-break {self.tiebreak!r}")

    def fit(self, X, y=None):
        profile = UtilityProfile(check_array(X, dtype=np.float64))
        rule, tb = self._rule(), self._tiebreak()
        if self.threshold is None:
            committee = elect_topk(rule, profile, int(self.n_winners), tb)
        else:
            committee = elect_threshold(rule, profile, float(self.threshold), tb)
        self.committee_ = committee
        self.members_ = np.array(committee.members)
        self.score_ = committee.score
        self.n_features_in_ = profile.n_candidates
        return self

    def transform(self, X):
        """Satisfaction of each voter in ``X`` with the fitted committee."""
        check_is_fitted(self, "committee_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DomainError(f"expected {self.n_features_in_} candidates, got {X.shape[1]}")
        return voter_scores(self._rule(), UtilityProfile(X), self.committee_.members)

    def fit_predict(self, X, y=None):
        return self.fit(X).members_


# -- ballot files -----------------------------------------------------------

BALLOT_KEYS = {"rule", "n", "threshold", "seed", "lottery_voter"}


@dataclass(frozen=True)
class BallotFile:
    profile: UtilityProfile
    header: dict


def parse_ballots(text: str, path=None) -> BallotFile:
    """Parse the ballot text format.

    Header lines look like ``# key: value`` (keys: rule, n, threshold, seed,
    lottery_voter); every other non-blank line is one voter's utilities,
    separated by whitespace or commas. Lines starting with ``##`` are comments.
    """
    header: dict = {}
    rows: list[list[float]] = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("##"):
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if ":" not in body:
                raise ParseError(f"header line must be '# key: value', got {raw!r}", path, lineno)
            key, value = (s.strip() for s in body.split(":", 1))
            key = key.lower()
            if key not in BALLOT_KEYS:
                raise ParseError(f"unknown header key {key!r} (known: {', '.join(sorted(BALLOT_KEYS))})",
                                 path, lineno)
            header[key] = _parse_header_value(key, value, path, lineno)
            continue
        try:
            row = [float(tok) for tok in line.replace(",", " ").split()]
        except ValueError:
            raise ParseError(f"non-numeric utility in {raw!r}", path, lineno) from None
        if not all(math.isfinite(v) for v in row):
            raise ParseError("utilities must be finite", path, lineno)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"expected {width} utilities, got {len(row)}", path, lineno)
        rows.append(row)
    if not rows:
        raise ParseError("no ballots found", path)
    return BallotFile(UtilityProfile(np.array(rows)), header)


def _parse_header_value(key, value, path, lineno):
    try:
        if key == "rule":
            return RuleKind.parse(value)
        if key == "threshold":
            return float(value)
        return int(value)
    except (ValueError, ConfigurationError) as exc:
        raise ParseError(f"bad value for {key!r}: {exc}", path, lineno) from None


def read_ballots(path) -> BallotFile:
    path = Path(path)
    return parse_ballots(path.read_text(encoding="utf-8"), path)


def format_ballots(profile: UtilityProfile, **header) -> str:
    lines = []
    for key, value in header.items():
        if key not in BALLOT_KEYS:
            raise DomainError(f"unknown header key {key!r}")
        if isinstance(value, RuleKind):
            value = value.value
        lines.append(f"# {key}: {value}")
    for row in profile.utilities:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
