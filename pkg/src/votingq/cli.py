"""Command-line interface: ``votingq {elect,train,experiment,report,env}``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .ensemble import EnsembleQLearner, PolicyKind
from .exceptions import ConfigurationError, DomainError, ParseError, VotingQError
from .harness import EnvSpec, MetricSettings, RunLog, fmt
from .qcore import QTable, load_tables, save_tables
from .votecore import (
    LOWEST_INDEX,
    RuleKind,
    ScoringRule,
    TieBreakPolicy,
    elect_bruteforce,
    elect_threshold,
    elect_topk,
    read_ballots,
)

ENV_KINDS = ("corridor", "doorkey", "multiroom", "keycorridor", "obstructedmaze")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _CliError(message, 2)


class _CliError(Exception):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


def _use_color(stream) -> bool:
    return "NO_COLOR" not in os.environ and hasattr(stream, "isatty") and stream.isatty()


def _param(text: str):
    """``key=value`` with the value read as a TOML literal (bare words become strings)."""
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = (s.strip() for s in text.split("=", 1))
    try:
        parsed = harness.tomllib.loads(f"v = {value}")["v"]
    except harness.tomllib.TOMLDecodeError:
        parsed = value
    return key, parsed


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="votingq", description="Committee voting rules and voting ensembles of tabular Q-learners.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("elect", help="elect a committee from a ballot file",
                       description="Elect a committee from a ballot file. Header lines '# key: value' "
                                   "(rule, n, threshold, seed, lottery_voter) set defaults; flags override them.")
    e.add_argument("ballots", help="ballot file: one voter per line, utilities separated by spaces or commas")
    e.add_argument("--rule", help="plurality|sntv, bloc, ccr, borda, judge, lottery")
    size = e.add_mutually_exclusive_group()
    size.add_argument("--n", type=int, help="committee size (greedy top-n)")
    size.add_argument("--threshold", type=float, help="satisfaction threshold (dynamic committee size)")
    e.add_argument("--exact", action="store_true", help="exhaustive search instead of greedy (needs --n)")
    e.add_argument("--tiebreak", choices=("lowest", "random"), default="lowest",
                   help="tie-break policy for greedy steps (default: lowest index)")
    e.add_argument("--seed", type=int, help="seed for random tie-breaking")
    e.add_argument("--lottery-voter", type=int, help="voter whose ballot the lottery rule uses")

    t = sub.add_parser("train", help="train one agent on one environment",
                       description="Train one voting ensemble on one environment and print a summary.")
    _env_args(t)
    t.add_argument("--policy", default="committee", help="majority_voting, rank_voting, average, bootstrapped, "
                                                         "boltzmann_addition or committee (default)")
    t.add_argument("--rule", default="judge", help="committee rule (committee policy only; default judge)")
    t.add_argument("--s-thresh", type=float, default=0.0, help="satisfaction threshold (default 0)")
    t.add_argument("--utility-mode", choices=("raw", "softmax"), default="raw", help="ballot utilities")
    t.add_argument("--update-prob", type=float, help="per-head update probability (default: always update)")
    t.add_argument("--heads", type=int, default=10, help="ensemble size k (default 10)")
    t.add_argument("--steps", type=int, default=200_000, help="environment steps (default 200000)")
    t.add_argument("--alpha", type=float, default=0.2, help="learning rate (default 0.2)")
    t.add_argument("--gamma", type=float, default=0.9, help="discount (default 0.9)")
    t.add_argument("--epsilon-start", type=float, default=1.0, help="initial exploration rate (default 1)")
    t.add_argument("--epsilon-end", type=float, default=0.001, help="final exploration rate (default 0.001)")
    t.add_argument("--anneal", type=int, help="annealing steps (default: half of --steps)")
    t.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    t.add_argument("--backend", choices=("compiled", "python"), default="compiled", help="training loop")
    t.add_argument("--load", help="start from Q-tables saved with --save (.npz)")
    t.add_argument("--save", help="write the learned Q-tables to this .npz file")
    t.add_argument("--log", help="write the episode log as a RunLog CSV")
    t.add_argument("--ema-coeff", type=float, default=0.999, help="EMA coefficient for the summary score")

    x = sub.add_parser("experiment", help="run a TOML experiment config",
                       description="Run every (env, agent, seed) of a config; writes run logs, report and curves.")
    x.add_argument("--config", required=True, help="experiment config (TOML, 'version' field mandatory)")
    x.add_argument("--out", required=True, help="output directory")
    x.add_argument("--jobs", type=int, default=1, help="worker processes (default 1); output does not depend on it")
    x.add_argument("--seed", type=int, help="replace the seed list by SEED, SEED+1, ... (same count)")
    x.add_argument("--plots", action="store_true", help="also write one SVG learning-curve plot per env")
    x.add_argument("--quiet", action="store_true", help="no progress lines")

    r = sub.add_parser("report", help="score run logs and print the comparison table",
                       description="Rebuild the report from a directory written by 'experiment' (or any "
                                   "directory of RunLog CSVs).")
    r.add_argument("dir", help="experiment output directory or directory of RunLog CSVs")
    r.add_argument("--out", help="write report.csv/curves.csv (and plots) here")
    r.add_argument("--plots", action="store_true", help="write SVG plots (into --out, else DIR)")
    r.add_argument("--ema-coeff", type=float, help="override the EMA coefficient")
    r.add_argument("--sample-interval", type=int, help="override the sampling interval")
    r.add_argument("--sample-count", type=int, help="override the number of samples")
    r.add_argument("--seed", type=int, help="accepted for uniformity; reports are deterministic")

    v = sub.add_parser("env", help="describe or render an environment")
    v.add_argument("action", choices=("describe", "render"), help="describe: layout and state count; "
                                                                  "render: text art of the start state")
    _env_args(v)
    v.add_argument("--seed", type=int, default=0, help="run seed whose layout is shown (default 0)")
    return p


def _env_args(p):
    p.add_argument("--env", default="corridor", choices=ENV_KINDS, help="environment kind (default corridor)")
    p.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE",
                   help="environment parameter, repeatable (e.g. n_actions=30, size=6)")


def _build_env(args):
    # same layout as an experiment run with this seed
    try:
        return EnvSpec(args.env, args.env, dict(args.param)).build(args.seed)
    except TypeError as exc:
        raise ConfigurationError(f"--param: {exc}") from None


# -- commands -----------------------------------------------------------------

def cmd_elect(args, out):
    ballots = read_ballots(args.ballots)
    header = ballots.header
    rule_kind = RuleKind.parse(args.rule) if args.rule else header.get("rule")
    if rule_kind is None:
        raise ConfigurationError("no rule given (use --rule or a '# rule:' header)")
    voter = args.lottery_voter if args.lottery_voter is not None else header.get("lottery_voter")
    if rule_kind is RuleKind.LOTTERY and voter is None:
        raise ConfigurationError("the lottery rule needs --lottery-voter (or a '# lottery_voter:' header)")
    rule = ScoringRule(rule_kind, voter if rule_kind is RuleKind.LOTTERY else None)
    seed = args.seed if args.seed is not None else header.get("seed", 0)
    tiebreak = LOWEST_INDEX if args.tiebreak == "lowest" else TieBreakPolicy.seeded(seed)
    n = args.n
    threshold = args.threshold
    if n is None and threshold is None:
        n, threshold = header.get("n"), header.get("threshold")
    if args.exact:
        if n is None:
            raise ConfigurationError("--exact needs a committee size (--n)")
        committee = elect_bruteforce(rule, ballots.profile, n)
    elif n is not None:
        committee = elect_topk(rule, ballots.profile, n, tiebreak)
    elif threshold is not None:
        committee = elect_threshold(rule, ballots.profile, threshold, tiebreak)
    else:
        raise ConfigurationError("give a committee size (--n) or a threshold (--threshold)")
    members = ",".join(f"a{a}" for a in sorted(committee.members))
    print(f"rule: {rule_kind.value}", file=out)
    print(f"members: {{{members}}}", file=out)
    print(f"order: {' '.join(f'a{a}' for a in committee.members)}", file=out)
    print(f"score: {fmt(committee.score)}", file=out)


def cmd_train(args, out):
    env = _build_env(args)
    learner = EnsembleQLearner(
        policy=args.policy, rule=args.rule, s_thresh=args.s_thresh, n_heads=args.heads, alpha=args.alpha,
        gamma=args.gamma, epsilon_start=args.epsilon_start, epsilon_end=args.epsilon_end,
        anneal_steps=args.anneal if args.anneal is not None else max(1, args.steps // 2),
        utility_mode=args.utility_mode, update_prob=args.update_prob, total_steps=args.steps,
        backend=args.backend, random_state=args.seed)
    init = None
    if args.load:
        init = np.stack([t.values for t in load_tables(args.load)])
    learner.fit(env, init_tables=init)
    if args.save:
        save_tables(args.save, [QTable(learner.n_states_, learner.n_actions_, q) for q in learner.q_tables_])
    log = RunLog(args.env, _agent_label(args), args.seed, learner.episode_steps_, learner.episode_returns_,
                 args.steps)
    if args.log:
        Path(args.log).write_text(harness.runlog_csv([log]), encoding="utf-8", newline="")
    returns = learner.episode_returns_
    print(f"env: {args.env} ({learner.n_states_} states, {learner.n_actions_} actions)", file=out)
    print(f"agent: {_agent_label(args)}, {args.heads} heads, seed {args.seed}", file=out)
    print(f"steps: {args.steps}, episodes: {len(returns)}", file=out)
    if len(returns):
        tail = returns[-max(1, len(returns) // 10):]
        print(f"mean return (last 10% of episodes): {fmt(np.mean(tail))}", file=out)
        interval = max(1, args.steps // 100)
        settings = MetricSettings(args.ema_coeff, interval, args.steps // interval)
        entry = harness.ema_metric([log], settings)
        print(f"ema score: {fmt(entry.score)}", file=out)


def _agent_label(args):
    policy = PolicyKind.parse(args.policy)
    if policy is PolicyKind.COMMITTEE:
        return f"committee-{RuleKind.parse(args.rule).value}-{fmt(args.s_thresh)}"
    return policy.value


def cmd_experiment(args, out):
    config = harness.load_config(args.config)
    if args.seed is not None:
        from dataclasses import replace
        config = replace(config, seeds=tuple(range(args.seed, args.seed + len(config.seeds))))
    if args.jobs < 1:
        raise ConfigurationError("--jobs must be >= 1")
    total = len(config.envs) * len(config.agents) * len(config.seeds)
    print(f"config {config.digest()}: {total} runs of {config.total_steps} steps, jobs={args.jobs}", file=out)

    def progress(i, n, log):
        if not args.quiet:
            print(f"[{i}/{n}] {log.env} {log.agent} seed {log.seed}: {len(log.steps)} episodes", file=out)
            out.flush()

    logs = harness.run_experiment(config, args.jobs, progress)
    result = harness.write_outputs(config, logs, args.out, args.plots)
    _print_report(result.report, out)
    print(f"wrote {len(result.files)} files to {args.out}", file=out)


def cmd_report(args, out):
    directory = Path(args.dir)
    if not directory.is_dir():
        raise DomainError(f"{directory}: not a directory")
    settings = None
    overrides = (args.ema_coeff, args.sample_interval, args.sample_count)
    if any(v is not None for v in overrides):
        meta = harness.read_metadata(directory)
        base = MetricSettings(**meta["config"]["metric"]) if meta else MetricSettings()
        settings = MetricSettings(args.ema_coeff if args.ema_coeff is not None else base.ema_coeff,
                                  args.sample_interval or base.sample_interval,
                                  args.sample_count or base.sample_count)
    report = harness.report_from_dir(directory, settings)
    _print_report(report, out)
    target = args.out or (args.dir if args.plots else None)
    if target is not None:
        Path(target).mkdir(parents=True, exist_ok=True)
        files = harness.write_report(report, target, args.plots)
        print(f"wrote {len(files)} files to {target}", file=out)


def _print_report(report, out):
    if len(report.agents) >= 2:
        text, _ = harness.compare_report(report, color=_use_color(out))
        out.write(text)
    for env in report.envs:
        for e in harness.ranking(report, env):
            print(f"{env},{e.agent},{fmt(e.score)},{fmt(e.stderr)},{e.n_seeds},{e.best_step}", file=out)


def cmd_env(args, out):
    env = _build_env(args)
    if args.action == "describe":
        print(env.describe(), file=out)
    elif hasattr(env, "render"):
        print(env.render(), file=out)
    else:
        print(env.describe(), file=out)


COMMANDS = {"elect": cmd_elect, "train": cmd_train, "experiment": cmd_experiment, "report": cmd_report,
            "env": cmd_env}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args, out)
    except _CliError as exc:
        print(f"votingq: error: {exc}", file=err)
        return exc.code
    except ConfigurationError as exc:
        print(f"votingq: error: {exc}", file=err)
        return 2
    except (ParseError, DomainError, VotingQError) as exc:
        print(f"votingq: error: {exc}", file=err)
        return 1
    except OSError as exc:
        name = f" {exc.filename}" if exc.filename else ""
        print(f"votingq: error:{name}: {exc.strerror}", file=err)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
