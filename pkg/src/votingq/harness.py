"""Experiment runner, EMA learning-curve metric and reports.

An experiment is a cartesian product of environments, agents and seeds. Each
run trains one :class:`~votingq.ensemble.EnsembleQLearner` and records the
global step at which every episode ended together with its return. Runs are
independent; a process pool executes them and results are gathered in a fixed
order, so the output never depends on ``jobs``.

Score of an agent on an environment: per run, an exponential moving average
of episode returns (indexed by episode) is read off at ``sample_count``
equidistant global steps; the sampled curves are averaged over seeds and the
maximum of that mean curve is the score.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ensemble import UTILITY_MODES, EnsembleQLearner, PolicyKind, role_seed
from .envs import CorridorConfig, CorridorEnv, GridConfig, GridWorld
from .envs.grid import GRID_KINDS
from .exceptions import ConfigurationError, DomainError, ParseError
from .votecore import RuleKind

CONFIG_VERSION = 1
RUNLOG_COLUMNS = ("step", "episode_return", "seed", "agent", "env")
REPORT_COLUMNS = ("env", "agent", "score", "stderr", "n_seeds", "best_step", "ema_coeff", "best")
CURVE_COLUMNS = ("env", "agent", "step", "ema_mean", "ema_stderr")
METADATA_FILE = "experiment.json"
RUNS_DIR = "runs"


def fmt(x) -> str:
    """The one float formatter used for CSV cells and printed numbers (round-trips exactly)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class EnvSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    layout_seed: int | None = None

    def build(self, seed: int):
        """Environment for run ``seed``; the layout comes from the seed's layout stream unless pinned."""
        layout = role_seed(seed, "layout") if self.layout_seed is None else int(self.layout_seed)
        if self.kind == "corridor":
            return CorridorEnv(CorridorConfig(**self.params, seed=layout))
        return GridWorld(GridConfig(kind=self.kind, **self.params, seed=layout))


@dataclass(frozen=True)
class AgentSpec:
    name: str
    policy: str = "committee"
    rule: str | None = None
    s_thresh: float = 0.0
    utility_mode: str = "raw"
    update_prob: float | None = None


@dataclass(frozen=True)
class MetricSettings:
    ema_coeff: float = 0.999
    sample_interval: int = 2000
    sample_count: int = 100

    @property
    def horizon(self) -> int:
        return self.sample_interval * self.sample_count

    def sample_steps(self) -> np.ndarray:
        return self.sample_interval * np.arange(1, self.sample_count + 1, dtype=np.int64)


@dataclass(frozen=True)
class ExperimentConfig:
    envs: tuple[EnvSpec, ...]
    agents: tuple[AgentSpec, ...]
    seeds: tuple[int, ...] = tuple(range(10))
    total_steps: int = 200_000
    n_heads: int = 10
    alpha: float = 0.2
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.001
    anneal_steps: int | None = None
    init_scale: float = 0.01
    metric: MetricSettings = field(default_factory=MetricSettings)
    version: int = CONFIG_VERSION

    @property
    def anneal(self) -> int:
        return self.total_steps // 2 if self.anneal_steps is None else self.anneal_steps

    def learner(self, agent: AgentSpec, seed: int) -> EnsembleQLearner:
        return EnsembleQLearner(
            policy=agent.policy, rule=agent.rule or "judge", s_thresh=agent.s_thresh, n_heads=self.n_heads,
            alpha=self.alpha, gamma=self.gamma, epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end, anneal_steps=self.anneal, utility_mode=agent.utility_mode,
            update_prob=agent.update_prob, init_scale=self.init_scale, total_steps=self.total_steps,
            random_state=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["envs"] = [asdict(e) for e in self.envs]
        d["agents"] = [asdict(a) for a in self.agents]
        d["seeds"] = list(self.seeds)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_TOP_KEYS = {"version", "seeds", "n_seeds", "total_steps", "n_heads", "init_scale", "learning", "metric",
             "envs", "agents"}
_LEARNING_KEYS = {"alpha", "gamma", "epsilon_start", "epsilon_end", "anneal_steps"}
_METRIC_KEYS = {"ema_coeff", "sample_interval", "sample_count"}
_AGENT_KEYS = {"name", "policy", "rule", "s_thresh", "utility_mode", "update_prob"}
_CORRIDOR_KEYS = {"n_actions", "n_states", "episode_cap", "start_n", "start_p", "reward_low", "reward_high"}
_GRID_KEYS = {"size", "max_steps", "n_rooms", "room_size", "rows"}


class _Checker:
    """Collects ``(field_path, message)`` problems while reading a config mapping."""

    def __init__(self):
        self.errors: list[tuple[str, str]] = []

    def fail(self, path, msg):
        self.errors.append((path, msg))

    def unknown(self, table, allowed, prefix):
        for key in table:
            if key not in allowed:
                self.fail(f"{prefix}{key}", "unknown field")

    def get(self, table, key, kind, default, path, check=None, what=""):
        if key not in table:
            return default
        value = table[key]
        ok = isinstance(value, kind) and not isinstance(value, bool)
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value, ok = float(value), True
        if not ok:
            names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            self.fail(path, f"expected {names}, got {type(value).__name__}")
            return default
        if check is not None and not check(value):
            self.fail(path, f"must be {what}")
            return default
        return value


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config mapping; every problem is reported with its field path."""
    c = _Checker()
    if "version" not in data:
        c.fail("version", "missing (mandatory)")
    elif data["version"] != CONFIG_VERSION:
        c.fail("version", f"unsupported schema version {data['version']!r} (this build reads {CONFIG_VERSION})")
    c.unknown(data, _TOP_KEYS, "")

    total = c.get(data, "total_steps", int, 200_000, "total_steps", lambda v: v >= 1, "positive")
    n_heads = c.get(data, "n_heads", int, 10, "n_heads", lambda v: v >= 1, "positive")
    init_scale = c.get(data, "init_scale", float, 0.01, "init_scale", lambda v: v >= 0, ">= 0")
    if "seeds" in data and "n_seeds" in data:
        c.fail("seeds", "give either seeds or n_seeds, not both")
    seeds: tuple[int, ...] = tuple(range(10))
    if "seeds" in data:
        raw = data["seeds"]
        if not isinstance(raw, list) or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0
                                                for s in raw):
            c.fail("seeds", "expected a list of non-negative integers")
        elif not raw:
            c.fail("seeds", "must not be empty")
        elif len(set(raw)) != len(raw):
            c.fail("seeds", "contains duplicates")
        else:
            seeds = tuple(raw)
    elif "n_seeds" in data:
        n = c.get(data, "n_seeds", int, 10, "n_seeds", lambda v: v >= 1, "positive")
        seeds = tuple(range(n))

    learning = data.get("learning", {})
    if not isinstance(learning, dict):
        c.fail("learning", "expected a table")
        learning = {}
    c.unknown(learning, _LEARNING_KEYS, "learning.")
    alpha = c.get(learning, "alpha", float, 0.2, "learning.alpha", lambda v: 0 < v <= 1, "in (0, 1]")
    gamma = c.get(learning, "gamma", float, 0.9, "learning.gamma", lambda v: 0 <= v < 1, "in [0, 1)")
    eps0 = c.get(learning, "epsilon_start", float, 1.0, "learning.epsilon_start", lambda v: 0 <= v <= 1,
                 "in [0, 1]")
    eps1 = c.get(learning, "epsilon_end", float, 0.001, "learning.epsilon_end", lambda v: 0 <= v <= 1,
                 "in [0, 1]")
    anneal = c.get(learning, "anneal_steps", int, None, "learning.anneal_steps", lambda v: v >= 1, "positive")

    metric_t = data.get("metric", {})
    if not isinstance(metric_t, dict):
        c.fail("metric", "expected a table")
        metric_t = {}
    c.unknown(metric_t, _METRIC_KEYS, "metric.")
    coeff = c.get(metric_t, "ema_coeff", float, 0.999, "metric.ema_coeff", lambda v: 0 <= v < 1, "in [0, 1)")
    interval = c.get(metric_t, "sample_interval", int, max(1, total // 100), "metric.sample_interval",
                     lambda v: v >= 1, "positive")
    count = c.get(metric_t, "sample_count", int, 100, "metric.sample_count", lambda v: v >= 1, "positive")
    if interval * count > total:
        c.fail("metric.sample_interval", f"sample_interval x sample_count = {interval * count} exceeds "
                                         f"total_steps = {total}")

    envs = []
    raw_envs = data.get("envs")
    if not isinstance(raw_envs, list) or not raw_envs:
        c.fail("envs", "expected a non-empty array of tables ([[envs]])")
        raw_envs = []
    for i, e in enumerate(raw_envs):
        spec = _parse_env(c, e, f"envs[{i}]")
        if spec is not None:
            envs.append(spec)
    _unique_names(c, envs, "envs")

    agents = []
    raw_agents = data.get("agents")
    if not isinstance(raw_agents, list) or not raw_agents:
        c.fail("agents", "expected a non-empty array of tables ([[agents]])")
        raw_agents = []
    for i, a in enumerate(raw_agents):
        spec = _parse_agent(c, a, f"agents[{i}]")
        if spec is not None:
            agents.append(spec)
    _unique_names(c, agents, "agents")

    if c.errors:
        lines = "\n".join(f"  {p}: {m}" for p, m in c.errors)
        raise ConfigurationError(f"invalid experiment config:\n{lines}", c.errors)
    return ExperimentConfig(tuple(envs), tuple(agents), seeds, total, n_heads, alpha, gamma, eps0, eps1,
                            anneal, init_scale, MetricSettings(coeff, interval, count), CONFIG_VERSION)


def _unique_names(c, specs, path):
    seen = set()
    for i, s in enumerate(specs):
        if s.name in seen:
            c.fail(f"{path}[{i}].name", f"duplicate name {s.name!r}")
        seen.add(s.name)


def _safe_name(c, table, path):
    name = table.get("name")
    if not isinstance(name, str) or not name:
        c.fail(f"{path}.name", "missing or not a string")
        return None
    if any(ch in name for ch in ',/\\"\n') or name != name.strip():
        c.fail(f"{path}.name", "must not contain commas, slashes, quotes or surrounding spaces")
        return None
    return name


def _parse_env(c, table, path):
    if not isinstance(table, dict):
        c.fail(path, "expected a table")
        return None
    n_before = len(c.errors)
    name = _safe_name(c, table, path)
    kind = str(table.get("kind", "")).lower().replace("-", "").replace("_", "")
    if kind == "corridor":
        allowed = _CORRIDOR_KEYS
    elif kind in GRID_KINDS:
        allowed = _GRID_KEYS
    else:
        c.fail(f"{path}.kind", f"unknown env kind {table.get('kind')!r} "
                               f"(choose from corridor, {', '.join(GRID_KINDS)})")
        return None
    c.unknown(table, allowed | {"name", "kind", "layout_seed"}, f"{path}.")
    params = {k: v for k, v in table.items() if k in allowed}
    layout = c.get(table, "layout_seed", int, None, f"{path}.layout_seed", lambda v: v >= 0, ">= 0")
    spec = EnvSpec(name, kind, params, layout) if name else None
    if spec is not None and len(c.errors) == n_before:
        try:
            if kind == "corridor":
                CorridorConfig(**params)
            else:
                GridConfig(kind=kind, **params)
        except (ConfigurationError, TypeError) as exc:
            c.fail(path, str(exc))
    return spec


def _parse_agent(c, table, path):
    if not isinstance(table, dict):
        c.fail(path, "expected a table")
        return None
    c.unknown(table, _AGENT_KEYS, f"{path}.")
    name = _safe_name(c, table, path)
    try:
        policy = PolicyKind.parse(table.get("policy", "committee"))
    except ConfigurationError as exc:
        c.fail(f"{path}.policy", str(exc))
        return None
    rule = None
    if policy is PolicyKind.COMMITTEE:
        if "rule" not in table:
            c.fail(f"{path}.rule", "committee agents need a rule")
            return None
        try:
            rule = RuleKind.parse(table["rule"]).value
        except ConfigurationError as exc:
            c.fail(f"{path}.rule", str(exc))
            return None
    elif "rule" in table:
        c.fail(f"{path}.rule", f"only committee agents take a rule (policy is {policy.value})")
    s_thresh = c.get(table, "s_thresh", float, 0.0, f"{path}.s_thresh", lambda v: v >= 0, ">= 0")
    if rule == RuleKind.LOTTERY.value and s_thresh != 0:
        c.fail(f"{path}.s_thresh", "the lottery rule only supports s_thresh = 0")
    mode = table.get("utility_mode", "raw")
    if mode not in UTILITY_MODES:
        c.fail(f"{path}.utility_mode", f"must be one of {', '.join(UTILITY_MODES)}")
    if policy is PolicyKind.BOLTZMANN_ADDITION and mode != "raw":
        c.fail(f"{path}.utility_mode", "Boltzmann addition applies its own softmax; use raw")
    update_prob = c.get(table, "update_prob", float, None, f"{path}.update_prob", lambda v: 0 <= v <= 1,
                        "in [0, 1]")
    if name is None:
        return None
    return AgentSpec(name, policy.value, rule, s_thresh, mode, update_prob)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc.strerror}", path) from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        msg = str(exc).split(" (at line")[0]
        raise ParseError(f"TOML syntax error: {msg}", path, line) from None
    try:
        return parse_config(data)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}", exc.errors) from None


# -- running ------------------------------------------------------------------

@dataclass(frozen=True)
class RunLog:
    env: str
    agent: str
    seed: int
    steps: np.ndarray
    returns: np.ndarray
    total_steps: int
    config_hash: str = ""

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64)
        returns = np.asarray(self.returns, dtype=np.float64)
        if steps.shape != returns.shape or steps.ndim != 1:
            raise DomainError("steps and returns must be 1-d arrays of equal length")
        if steps.size and (np.any(np.diff(steps) <= 0) or steps[0] < 1):
            raise DomainError(f"run {self.env}/{self.agent}/{self.seed}: steps must be positive and strictly increasing")
        if not np.isfinite(returns).all():
            raise DomainError(f"run {self.env}/{self.agent}/{self.seed}: returns must be finite")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "returns", returns)

    def same_data(self, other: "RunLog") -> bool:
        return (self.env, self.agent, self.seed, self.total_steps) == (other.env, other.agent, other.seed,
                                                                        other.total_steps) \
            and np.array_equal(self.steps, other.steps) and np.array_equal(self.returns, other.returns)


def run_one(config: ExperimentConfig, env_spec: EnvSpec, agent: AgentSpec, seed: int) -> RunLog:
    env = env_spec.build(seed)
    learner = config.learner(agent, seed).fit(env)
    return RunLog(env_spec.name, agent.name, seed, learner.episode_steps_, learner.episode_returns_,
                  config.total_steps, config.digest())


def _run_task(task):
    return run_one(*task)


def run_experiment(config: ExperimentConfig, jobs: int = 1, progress=None) -> list[RunLog]:
    """Every (env, agent, seed) run, ordered env-major, then agent, then seed.

    ``jobs > 1`` spreads runs over worker processes; the logs are identical
    either way.
    """
    tasks = [(config, e, a, s) for e in config.envs for a in config.agents for s in config.seeds]
    if jobs < 1:
        raise ConfigurationError("jobs must be >= 1")
    logs = []
    if jobs == 1:
        iterator = map(_run_task, tasks)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        iterator = pool.map(_run_task, tasks)
    try:
        for i, log in enumerate(iterator, 1):
            logs.append(log)
            if progress is not None:
                progress(i, len(tasks), log)
    finally:
        if pool is not None:
            pool.shutdown()
    return logs


# -- metric -------------------------------------------------------------------

def ema_curve(log: RunLog, settings: MetricSettings) -> np.ndarray:
    """EMA of episode returns sampled at ``interval * j`` for ``j = 1..count``.

    The EMA starts at the first return and is ``nan`` until an episode has
    ended.
    """
    if log.total_steps < settings.horizon:
        raise DomainError(f"run {log.env}/{log.agent}/seed {log.seed} has {log.total_steps} steps, fewer "
                          f"than the sampling horizon {settings.horizon} "
                          f"({settings.sample_count} x {settings.sample_interval})")
    out = np.full(settings.sample_count, np.nan)
    c = settings.ema_coeff
    ema = math.nan
    j = 0
    n = len(log.steps)
    for i, point in enumerate(settings.sample_steps()):
        while j < n and log.steps[j] <= point:
            r = float(log.returns[j])
            ema = r if j == 0 else ema + (1.0 - c) * (r - ema)
            j += 1
        out[i] = ema
    return out


@dataclass(frozen=True)
class MetricEntry:
    env: str
    agent: str
    score: float
    stderr: float
    best_step: int
    n_seeds: int
    steps: np.ndarray
    curve: np.ndarray
    curve_stderr: np.ndarray


@dataclass(frozen=True)
class MetricReport:
    entries: tuple[MetricEntry, ...]
    settings: MetricSettings

    def entry(self, env: str, agent: str) -> MetricEntry:
        for e in self.entries:
            if e.env == env and e.agent == agent:
                return e
        raise KeyError((env, agent))

    @property
    def envs(self) -> list[str]:
        return list(dict.fromkeys(e.env for e in self.entries))

    @property
    def agents(self) -> list[str]:
        return list(dict.fromkeys(e.agent for e in self.entries))

    def same_as(self, other: "MetricReport") -> bool:
        if self.settings != other.settings or len(self.entries) != len(other.entries):
            return False
        for a, b in zip(self.entries, other.entries):
            if (a.env, a.agent, a.n_seeds, a.best_step) != (b.env, b.agent, b.n_seeds, b.best_step):
                return False
            for x, y in ((a.score, b.score), (a.stderr, b.stderr)):
                if not (x == y or (math.isnan(x) and math.isnan(y))):
                    return False
            if not (np.array_equal(a.curve, b.curve, equal_nan=True)
                    and np.array_equal(a.curve_stderr, b.curve_stderr, equal_nan=True)):
                return False
        return True


def ema_metric(logs, settings: MetricSettings) -> MetricEntry:
    """Score one agent on one environment from its runs (one per seed)."""
    logs = list(logs)
    if not logs:
        raise DomainError("ema_metric needs at least one run log")
    keys = {(log.env, log.agent) for log in logs}
    if len(keys) != 1:
        raise DomainError(f"ema_metric expects runs of a single agent on a single env, got {sorted(keys)}")
    curves = np.array([ema_curve(log, settings) for log in logs])
    counts = np.sum(~np.isnan(curves), axis=0)
    if not counts.any():
        raise DomainError(f"no episode of {logs[0].agent} on {logs[0].env} ended within the sampling horizon")
    with np.errstate(invalid="ignore", divide="ignore"):
        # pointwise mean over the seeds whose first episode has ended
        total = np.where(counts > 0, np.nansum(curves, axis=0), np.nan)
        mean = total / np.where(counts > 0, counts, 1)
        dev = np.where(np.isnan(curves), 0.0, curves - mean) ** 2
        var = np.where(counts > 1, dev.sum(axis=0) / np.maximum(counts - 1, 1), np.nan)
        stderr = np.sqrt(var / counts)
    best = int(np.nanargmax(mean))
    env, agent = next(iter(keys))
    return MetricEntry(env, agent, float(mean[best]), float(stderr[best]), int(settings.sample_steps()[best]),
                       len(logs), settings.sample_steps(), mean, stderr)


def build_report(logs, settings: MetricSettings) -> MetricReport:
    groups: dict[tuple[str, str], list[RunLog]] = {}
    for log in logs:
        groups.setdefault((log.env, log.agent), []).append(log)
    entries = []
    for key in groups:
        runs = sorted(groups[key], key=lambda r: r.seed)
        entries.append(ema_metric(runs, settings))
    return MetricReport(tuple(entries), settings)


def ranking(report: MetricReport, env: str) -> list[MetricEntry]:
    """Entries for ``env`` sorted by score (descending), ties by agent name."""
    rows = [e for e in report.entries if e.env == env]
    return sorted(rows, key=lambda e: (-e.score, e.agent))


def compare_report(report: MetricReport, color: bool = False) -> tuple[str, str]:
    """Comparison table (environments x agents) as ``(text, csv)``; the best cell per row is marked."""
    agents = report.agents
    if len(agents) < 2:
        raise DomainError("a comparison needs at least two agents")
    s = report.settings
    header = (f"EMA score (coeff {fmt(s.ema_coeff)}, {s.sample_count} samples every {s.sample_interval} "
              f"steps); max of the seed-mean curve, * marks the best per row")
    width = max(8, *(len(a) for a in agents))
    env_w = max(3, *(len(e) for e in report.envs))
    lines = [header, "env".ljust(env_w) + "  " + "  ".join(a.rjust(width) for a in agents)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for env in report.envs:
        ranked = ranking(report, env)
        best = ranked[0].score
        cells = []
        for agent in agents:
            try:
                e = report.entry(env, agent)
            except KeyError:
                cells.append("-".rjust(width))
                continue
            mark = "*" if e.score == best else " "
            cell = f"{e.score:.4f}{mark}".rjust(width)
            if color and mark == "*":
                cell = f"\x1b[1m{cell}\x1b[0m"
            cells.append(cell)
        lines.append(env.ljust(env_w) + "  " + "  ".join(cells))
        for e in ranked:
            writer.writerow([e.env, e.agent, fmt(e.score), fmt(e.stderr), e.n_seeds, e.best_step,
                             fmt(s.ema_coeff), int(e.score == best)])
    return "\n".join(lines) + "\n", buf.getvalue()


def curves_csv(report: MetricReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for e in report.entries:
        for step, m, se in zip(e.steps, e.curve, e.curve_stderr):
            writer.writerow([e.env, e.agent, int(step), fmt(m), fmt(se)])
    return buf.getvalue()


# -- files --------------------------------------------------------------------

def runlog_csv(logs) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RUNLOG_COLUMNS)
    for log in logs:
        for step, ret in zip(log.steps, log.returns):
            writer.writerow([int(step), fmt(ret), log.seed, log.agent, log.env])
    return buf.getvalue()


def write_runlogs(logs, directory) -> list[Path]:
    """One CSV per (env, agent) with all seeds, named ``<env>__<agent>.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, str], list[RunLog]] = {}
    for log in logs:
        groups.setdefault((log.env, log.agent), []).append(log)
    paths = []
    for (env, agent), runs in groups.items():
        path = directory / f"{env}__{agent}.csv"
        path.write_text(runlog_csv(runs), encoding="utf-8", newline="")
        paths.append(path)
    return paths


def read_runlogs(directory, total_steps: int | None = None, config_hash: str = "") -> list[RunLog]:
    """Parse every RunLog CSV under ``directory``.

    Without ``total_steps`` a run's length is taken to be its last episode end.
    """
    directory = Path(directory)
    files = sorted(directory.glob("*.csv")) if directory.is_dir() else []
    data: dict[tuple[str, str, int], tuple[list[int], list[float]]] = {}
    for path in files:
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            head = next(reader, None)
            if head is None:
                raise ParseError("empty file", path, 1)
            if tuple(head) != RUNLOG_COLUMNS:
                raise ParseError(f"expected header {','.join(RUNLOG_COLUMNS)}, got {','.join(head)}", path, 1)
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(RUNLOG_COLUMNS):
                    raise ParseError(f"expected {len(RUNLOG_COLUMNS)} fields, got {len(row)}", path, lineno)
                try:
                    step, ret, seed = int(row[0]), float(row[1]), int(row[2])
                except ValueError:
                    raise ParseError(f"malformed numeric field in {','.join(row)!r}", path, lineno) from None
                steps, rets = data.setdefault((row[4], row[3], seed), ([], []))
                if steps and step <= steps[-1]:
                    raise ParseError("steps must be strictly increasing within a run", path, lineno)
                steps.append(step)
                rets.append(ret)
    logs = []
    for (env, agent, seed), (steps, rets) in data.items():
        total = total_steps if total_steps is not None else (steps[-1] if steps else 0)
        logs.append(RunLog(env, agent, seed, np.array(steps, dtype=np.int64), np.array(rets), total, config_hash))
    return logs


def write_metadata(config: ExperimentConfig, directory) -> Path:
    path = Path(directory) / METADATA_FILE
    meta = {"config_hash": config.digest(), "config": config.to_dict()}
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_metadata(directory) -> dict | None:
    path = Path(directory) / METADATA_FILE
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None


def plot_curves(report: MetricReport, directory) -> list[Path]:
    """One SVG of mean EMA curves per environment (needs matplotlib)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        matplotlib.rcParams["svg.hashsalt"] = "votingq"
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigurationError("plots need matplotlib (pip install 'votingq[plots]')") from None
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for env in report.envs:
        fig, ax = plt.subplots(figsize=(7, 4))
        for e in (x for x in report.entries if x.env == env):
            ax.plot(e.steps, e.curve, label=f"{e.agent} ({e.score:.3f})")
        ax.set_xlabel("environment steps")
        ax.set_ylabel("EMA of episode return (seed mean)")
        ax.set_title(env)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = directory / f"{env}.svg"
        # fixed metadata keeps the SVG byte-stable across runs
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


@dataclass(frozen=True)
class ExperimentOutput:
    logs: list
    report: MetricReport
    files: list


def write_outputs(config: ExperimentConfig, logs, out_dir, plots: bool = False) -> ExperimentOutput:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = write_runlogs(logs, out / RUNS_DIR)
    files.append(write_metadata(config, out))
    report = build_report(logs, config.metric)
    files += write_report(report, out, plots)
    return ExperimentOutput(logs, report, files)


def write_report(report: MetricReport, out_dir, plots: bool = False) -> list[Path]:
    out = Path(out_dir)
    files = []
    if len(report.agents) >= 2:
        text, table = compare_report(report)
        (out / "report.txt").write_text(text, encoding="utf-8")
        (out / "report.csv").write_text(table, encoding="utf-8", newline="")
        files += [out / "report.txt", out / "report.csv"]
    (out / "curves.csv").write_text(curves_csv(report), encoding="utf-8", newline="")
    files.append(out / "curves.csv")
    if plots:
        files += plot_curves(report, out / "plots")
    return files


def report_from_dir(directory, settings: MetricSettings | None = None) -> MetricReport:
    """Rebuild the MetricReport of an ``experiment`` output directory."""
    directory = Path(directory)
    meta = read_metadata(directory)
    runs = directory / RUNS_DIR if (directory / RUNS_DIR).is_dir() else directory
    total, digest = None, ""
    if meta is not None:
        cfg = meta.get("config", {})
        total, digest = cfg.get("total_steps"), meta.get("config_hash", "")
        if settings is None:
            settings = MetricSettings(**cfg.get("metric", {}))
    logs = read_runlogs(runs, total, digest)
    if not logs:
        raise DomainError(f"no run logs found in {directory}")
    if settings is None:
        settings = MetricSettings()
    order = _metadata_order(meta)
    logs.sort(key=lambda r: (order.get(("env", r.env), math.inf), r.env,
                             order.get(("agent", r.agent), math.inf), r.agent, r.seed))
    return build_report(logs, settings)


def _metadata_order(meta):
    order = {}
    if meta:
        cfg = meta.get("config", {})
        for i, e in enumerate(cfg.get("envs", [])):
            order[("env", e["name"])] = i
        for i, a in enumerate(cfg.get("agents", [])):
            order[("agent", a["name"])] = i
    return order


def default_jobs() -> int:
    return max(1, min(os.cpu_count() or 1, 8))
