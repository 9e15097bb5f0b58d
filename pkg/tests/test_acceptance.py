"""Acceptance suite: one PASS/FAIL line per criterion.

Run on its own with ``pytest tests/test_acceptance.py`` (lines are printed in
the terminal summary) or ``python tests/test_acceptance.py``. Criteria 8-10
train a few hundred agents and take several minutes on one core.
"""

import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from votingq import harness
from votingq.cli import main as cli_main
from votingq.ensemble import EnsembleAgent, PolicyKind, classic_policy, utilities
from votingq.qcore import ExplicitMDP, LearningParams, LinearSchedule, QTable, TransitionSample, q_update, value_iteration
from votingq.votecore import (
    RuleKind,
    ScoringRule,
    UtilityProfile,
    elect_bruteforce,
    elect_threshold,
    elect_topk,
    winning_scores,
)

RESULTS: dict[int, tuple[bool, str]] = {}
GREEDY = LearningParams(0.2, 0.9, LinearSchedule(0.0, 0.0, 1))
JOBS = max(1, os.cpu_count() or 1)

# corridor study: thresholds from a pilot on seeds 0-2; evaluated on held-out seeds
CORRIDOR_SEEDS = list(range(1000, 1010))
CORRIDOR_M = (10, 30, 50)
CORRIDOR_HEADS = 10
GRID_SEEDS = list(range(10))


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    return ok


def rule(kind, voter=None):
    return ScoringRule(kind, voter)


def agent_from(u, **kw):
    kw.setdefault("params", GREEDY)
    return EnsembleAgent([QTable(1, u.shape[1], [row]) for row in u], **kw)


def random_values(rng):
    k, m = int(rng.integers(1, 11)), int(rng.integers(2, 11))
    if rng.random() < 0.5:
        return rng.integers(-2, 3, size=(k, m)).astype(float)
    return rng.normal(size=(k, m))


# -- criteria 1-7: exact property suites -------------------------------------------

def test_criterion_1_single_winner_equivalences():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad = 0
    n = 10_000
    for _ in range(n):
        u = random_values(rng)
        agent = agent_from(u)
        profile = UtilityProfile(u)
        mv = classic_policy(PolicyKind.MAJORITY_VOTING, agent, 0)
        rv = classic_policy(PolicyKind.RANK_VOTING, agent, 0)
        avg = classic_policy(PolicyKind.AVERAGE, agent, 0)
        got = [elect_topk(rule(r), profile, 1).members[0] for r in
               (RuleKind.PLURALITY, RuleKind.BLOC, RuleKind.CCR, RuleKind.BORDA, RuleKind.JUDGE)]
        bad += got != [mv, mv, rv, rv, avg]
    dt = time.perf_counter() - t0
    ok = record(1, bad == 0 and dt < 30,
                f"{n - bad}/{n} profiles agree (plurality=bloc=MV, ccr=borda=RV, judge=avg); {dt:.1f}s (< 30s)")
    assert ok


def test_criterion_2_boltzmann_increments():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst_inc, worst_sum = 0.0, 0.0
    n = 1000
    for _ in range(n):
        u = random_values(rng) * 3
        soft = utilities(agent_from(u, utility_mode="softmax"), 0)
        k = soft.n_voters
        scores = winning_scores(rule(RuleKind.JUDGE), soft)
        order = elect_topk(rule(RuleKind.JUDGE), soft, soft.n_candidates).members
        probs = classic_policy(PolicyKind.BOLTZMANN_ADDITION, agent_from(u), 0)
        inc = np.diff(scores) / k
        worst_inc = max(worst_inc, float(np.abs(inc - probs[list(order)]).max()))
        worst_sum = max(worst_sum, abs(float(inc.sum()) - 1.0))
    dt = time.perf_counter() - t0
    ok = record(2, worst_inc <= 1e-9 and worst_sum <= 1e-9 and dt < 30,
                f"max |increment/k - BA prob| = {worst_inc:.2e}, max |sum - 1| = {worst_sum:.2e} "
                f"(tol 1e-9) over {n} profiles; {dt:.1f}s (< 30s)")
    assert ok


def test_criterion_3_lottery_is_bootstrapped():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    n, bad = 1000, 0
    for _ in range(n):
        u = random_values(rng)
        head = int(rng.integers(u.shape[0]))
        lottery = agent_from(u, rule=RuleKind.LOTTERY, bootstrap_head=head)
        boot = agent_from(u, policy=PolicyKind.BOOTSTRAPPED, rule=None, bootstrap_head=head)
        a = lottery.act(0, 0, np.random.default_rng(0))
        bad += a != classic_policy(PolicyKind.BOOTSTRAPPED, boot, 0)
    dt = time.perf_counter() - t0
    ok = record(3, bad == 0 and dt < 10, f"{n - bad}/{n} agents agree; {dt:.1f}s (< 10s)")
    assert ok


def test_criterion_4_greedy_vs_bruteforce():
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    mismatches, worst_ratio, n = 0, math.inf, 500
    for _ in range(n):
        k, m = int(rng.integers(1, 7)), int(rng.integers(1, 9))
        u = rng.integers(0, 4, size=(k, m)).astype(float) if rng.random() < 0.5 else rng.normal(size=(k, m))
        prof = UtilityProfile(u)
        for size in range(1, m + 1):
            for kind in (RuleKind.BORDA, RuleKind.BLOC, RuleKind.PLURALITY):
                mismatches += elect_topk(rule(kind), prof, size).score != elect_bruteforce(rule(kind), prof, size).score
            g = elect_topk(rule(RuleKind.JUDGE), prof, size).score
            mismatches += abs(g - elect_bruteforce(rule(RuleKind.JUDGE), prof, size).score) > 1e-9
            opt = elect_bruteforce(rule(RuleKind.CCR), prof, size).score
            if opt > 0:
                worst_ratio = min(worst_ratio, elect_topk(rule(RuleKind.CCR), prof, size).score / opt)
    dt = time.perf_counter() - t0
    bound = 1 - 1 / math.e
    ok = record(4, mismatches == 0 and worst_ratio >= bound and dt < 300,
                f"{mismatches} greedy/exact mismatches (borda, bloc, plurality, judge); worst CCR ratio "
                f"{worst_ratio:.4f} >= {bound:.4f}; {dt:.1f}s (< 300s)")
    assert ok


def test_criterion_5_committee_monotonicity():
    rng = np.random.default_rng(505)
    t0 = time.perf_counter()
    n, bad = 1000, 0
    for _ in range(n):
        k, m = int(rng.integers(1, 11)), int(rng.integers(2, 9))
        u = rng.integers(0, 4, size=(k, m)).astype(float) if rng.random() < 0.5 else rng.normal(size=(k, m))
        prof = UtilityProfile(u)
        for kind in (RuleKind.JUDGE, RuleKind.BORDA):
            prev = frozenset()
            for size in range(1, m + 1):
                cur = elect_topk(rule(kind), prof, size).member_set
                if not prev <= cur:
                    bad += 1
                    break
                prev = cur
    dt = time.perf_counter() - t0
    ok = record(5, bad == 0 and dt < 10, f"{2 * n - bad}/{2 * n} (profile, rule) pairs nested; {dt:.1f}s (< 10s)")
    assert ok


def test_criterion_6_threshold_trace():
    p3 = UtilityProfile([[3, 2, 1], [3, 2, 1], [1, 2, 3]])
    judge = rule(RuleKind.JUDGE)
    got = [elect_threshold(judge, p3, t).members for t in (10, 0, 1e9)]
    want = [(0, 1), (0,), (0, 1, 2)]
    ok = record(6, got == want, f"S_thresh 10 -> {got[0]}, 0 -> {got[1]}, 1e9 -> {got[2]} (want {want})")
    assert ok


def test_criterion_7_q_learning_sanity():
    t0 = time.perf_counter()
    n = 5
    nxt = np.array([[max(s - 1, 0), min(s + 1, n - 1)] for s in range(n)])
    rew = np.zeros((n, 2))
    term = nxt == n - 1
    rew[term] = 1.0
    mdp = ExplicitMDP.deterministic(nxt, rew, term)
    oracle = value_iteration(mdp, 0.9).values
    rng = np.random.default_rng(707)
    table, visits, s = QTable(n, 2), np.zeros((n, 2)), 0
    for _ in range(50_000):
        a = int(rng.integers(2))
        visits[s, a] += 1
        q_update(table, TransitionSample(s, a, rew[s, a], nxt[s, a], bool(term[s, a])),
                 LearningParams(visits[s, a] ** -0.7, 0.9))
        s = int(rng.integers(n - 1)) if term[s, a] else int(nxt[s, a])
    err = float(np.abs(table.values[: n - 1] - oracle[: n - 1]).max())
    dt = time.perf_counter() - t0
    ok = record(7, err < 1e-3 and dt < 10, f"sup-norm |Q - Q*| = {err:.2e} (< 1e-3); {dt:.1f}s (< 10s)")
    assert ok


# -- criteria 8-10: reproduction runs ------------------------------------------------

def corridor_config_text(m, seeds=CORRIDOR_SEEDS, steps=200_000):
    # CCR threshold: 90% of the largest possible satisfaction, k * (m - 1)
    ccr = 0.9 * CORRIDOR_HEADS * (m - 1)
    lines = [
        "version = 1",
        f"seeds = {list(seeds)}",
        f"total_steps = {steps}",
        f"n_heads = {CORRIDOR_HEADS}",
        "[learning]",
        "alpha = 0.2",
        "gamma = 0.9",
        "epsilon_start = 1.0",
        "epsilon_end = 0.001",
        f"anneal_steps = {steps // 2}",
        "[metric]",
        "ema_coeff = 0.999",
        f"sample_interval = {steps // 100}",
        "sample_count = 100",
        "[[envs]]",
        f'name = "corridor-m{m}"',
        'kind = "corridor"',
        f"n_actions = {m}",
    ]
    agents = [("MV", 'policy = "majority_voting"'), ("RV", 'policy = "rank_voting"'),
              ("SNTV", 'rule = "plurality"\ns_thresh = 5'), ("CCR", f'rule = "ccr"\ns_thresh = {ccr!r}')]
    for name, body in agents:
        lines += ["[[agents]]", f'name = "{name}"', body]
    return "\n".join(lines) + "\n"


def corridor_configs(out_root):
    """One config per width, since the CCR threshold scales with m."""
    paths = []
    for m in CORRIDOR_M:
        p = Path(out_root) / f"corridor-m{m}.toml"
        p.write_text(corridor_config_text(m))
        paths.append(p)
    return paths


def run_corridor(out_root):
    reports = {}
    for cfg in corridor_configs(out_root):
        out = Path(out_root) / cfg.stem
        code = cli_main(["experiment", "--config", str(cfg), "--out", str(out), "--jobs", str(JOBS), "--quiet"],
                        open(os.devnull, "w"))
        assert code == 0
        reports[cfg.stem] = harness.report_from_dir(out)
    return reports


@pytest.fixture(scope="module")
def corridor_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("corridor")
    t0 = time.perf_counter()
    reports = run_corridor(root)
    return root, reports, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_8_corridor(corridor_runs):
    _, reports, dt = corridor_runs

    def cell(m, agent):
        e = reports[f"corridor-m{m}"].entry(f"corridor-m{m}", agent)
        return e.score, e.stderr

    parts, ok = [], True
    for better, base in (("SNTV", "MV"), ("CCR", "RV")):
        (b, _), (a, _) = cell(50, better), cell(50, base)
        ok &= b >= a
        parts.append(f"m=50 {better} {b:.5f} vs {base} {a:.5f}")
    for base in ("MV", "RV"):
        seq = [cell(m, base) for m in CORRIDOR_M]
        mono = all(nxt[0] - nxt[1] <= prev[0] + prev[1] for prev, nxt in zip(seq, seq[1:]))
        ok &= mono
        parts.append(f"{base} over m={CORRIDOR_M}: " + ", ".join(f"{s:.5f}+-{e:.5f}" for s, e in seq)
                     + (" non-increasing within stderr" if mono else " INCREASES beyond stderr"))
    ok &= dt <= 600
    ok = record(8, ok, "; ".join(parts) + f"; {dt:.0f}s (<= 600s)")
    assert ok


@pytest.mark.slow
def test_criterion_10_determinism(corridor_runs, tmp_path):
    root, _, _ = corridor_runs
    run_corridor(tmp_path)
    files = sorted(p.relative_to(root) for p in root.rglob("*.csv"))
    same = [(root / f).read_bytes() == (tmp_path / f).read_bytes() for f in files]
    ok = record(10, files and all(same), f"{sum(same)}/{len(files)} CSV files bit-identical on a repeat run")
    assert ok


GRID_AGENTS = [
    ("Average", 'policy = "average"'), ("Rank", 'policy = "rank_voting"'),
    ("Majority", 'policy = "majority_voting"'), ("Lottery", 'rule = "lottery"'),
    ("Bloc", 'rule = "bloc"\ns_thresh = 10'), ("Borda", 'rule = "borda"\ns_thresh = 68'),
    ("SNTV", 'rule = "plurality"\ns_thresh = 10'), ("CCR", 'rule = "ccr"\ns_thresh = 68'),
]
GRID_ENVS = [
    ("DoorKey-8x8", 'kind = "doorkey"\nsize = 8'),
    ("KeyCorridor-S2R1", 'kind = "keycorridor"\nroom_size = 2\nrows = 1'),
]


def grid_config_text(steps=300_000):
    lines = ["version = 1", f"seeds = {GRID_SEEDS}", f"total_steps = {steps}", "n_heads = 10",
             "[learning]", "alpha = 0.2", "gamma = 0.9", "epsilon_start = 1.0", "epsilon_end = 0.001",
             f"anneal_steps = {steps // 2}", "[metric]", "ema_coeff = 0.999", f"sample_interval = {steps // 100}",
             "sample_count = 100"]
    for name, body in GRID_ENVS:
        lines += ["[[envs]]", f'name = "{name}"', body]
    for name, body in GRID_AGENTS:
        lines += ["[[agents]]", f'name = "{name}"', body]
    return "\n".join(lines) + "\n"


@pytest.mark.slow
def test_criterion_9_grid_ordering(tmp_path):
    cfg = tmp_path / "grid.toml"
    cfg.write_text(grid_config_text())
    t0 = time.perf_counter()
    code = cli_main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "out"), "--jobs", str(JOBS),
                     "--quiet"], open(os.devnull, "w"))
    assert code == 0
    dt = time.perf_counter() - t0
    report = harness.report_from_dir(tmp_path / "out")
    top, middle, bottom = ("CCR", "SNTV", "Lottery"), ("Majority", "Bloc"), ("Average", "Rank", "Borda")
    ok, parts = True, []
    for env, _ in GRID_ENVS:
        s = {a: report.entry(env, a).score for a, _ in GRID_AGENTS}
        env_ok = min(s[a] for a in top) > max(s[a] for a in bottom)
        mid_ok = min(s[a] for a in top) > max(s[a] for a in middle) and \
            min(s[a] for a in middle) > max(s[a] for a in bottom)
        ok &= env_ok
        parts.append(f"{env}: " + " ".join(f"{a}={s[a]:.3f}" for a, _ in GRID_AGENTS)
                     + f" -> top>bottom {'holds' if env_ok else 'violated'}, "
                       f"three-tier {'holds' if mid_ok else 'violated'}")
    ok &= dt <= 1800
    ok = record(9, ok, "; ".join(parts) + f"; {dt:.0f}s (<= 1800s)")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
