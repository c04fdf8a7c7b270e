"""End-to-end acceptance gate: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``. The training criteria
share module-scoped runs, so the whole file takes several minutes.
"""
import contextlib
import csv
import itertools
import json
import statistics
import time

import numpy as np
import pytest
from scipy import stats

from guirise.cli import main
from guirise.config import RunConfig, override
from guirise.grammar import parse_turn, serialize_turn
from guirise.grpo import GrpoLogs, compute_advantages
from guirise.metrics import aggregate
from guirise.pipeline import evaluate_policy, generate_splits, load_params, save_params, train_and_eval
from guirise.policy.scripted import ScriptedCorruptPolicy, ScriptedOraclePolicy
from guirise.rewards import action_component_rewards
from guirise.sim import SimConfig, generate_dataset
from guirise.trajectory import GUIACT, AgentTurn, GuiAction, write_episodes

import gradcheck
from oracles import action_strings, reward_oracle

SEEDS = (0, 1, 2)


@pytest.fixture
def criterion(capsys):
    """Context manager printing exactly one verdict line; details go in the yielded dict."""

    @contextlib.contextmanager
    def verdict(n, title):
        with capsys.disabled():
            yield from _verdict(n, title)

    return verdict


def _verdict(n, title):
    info = {}
    t0 = time.perf_counter()
    status = "FAIL"
    try:
        yield info
        status = "PASS"
    finally:
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        print(f"\n[acceptance {n:>2}] {status}: {title} ({detail}; {time.perf_counter() - t0:.1f}s)", flush=True)


# ---------------------------------------------------------------- 1

def test_01_reward_truth_table_and_fuzz(criterion):
    with criterion(1, "action reward components match the rule table") as info:
        t0 = time.perf_counter()
        box = (0.4, 0.4, 0.6, 0.6)
        gt = GuiAction("CLICK", "x", (0.5, 0.5))
        table = 0
        for parse_ok, type_ok, inside in itertools.product([True, False], repeat=3):
            rec = {"action": "CLICK" if type_ok else "TAP", "value": "v",
                   "position": [0.5, 0.5] if inside else [0.9, 0.1]}
            if not parse_ok:
                rec["note"] = 1
            want = (1.0, float(type_ok), float(inside)) if parse_ok else (0.0, 0.0, 0.0)
            got = action_component_rewards(AgentTurn("", action_text=json.dumps(rec), tags_ok=True), gt, box)
            assert got == want, (parse_ok, type_ok, inside)
            table += 1
        rng = np.random.default_rng(11)
        bad = 0
        corpus = action_strings(10_000, seed=11)
        for text in corpus:
            gt_type = ["CLICK", "INPUT", "ENTER", "SCROLL"][rng.integers(4)]
            spatial = GUIACT.is_spatial(gt_type)
            if spatial:
                x, y = np.sort(rng.random(2)), np.sort(rng.random(2))
                b = (x[0], y[0], x[1], y[1])
            else:
                b = None
            g = GuiAction(gt_type, "v", (0.5, 0.5) if spatial else None)
            got = action_component_rewards(AgentTurn("", action_text=text, tags_ok=True), g, b)
            bad += got != reward_oracle(text, gt_type, b, GUIACT.spatial)
        elapsed = time.perf_counter() - t0
        info.update(table_rows=table, fuzzed=len(corpus), mismatches=bad, seconds=f"{elapsed:.2f}")
        assert bad == 0 and elapsed < 10


# ---------------------------------------------------------------- 2

def test_02_round_trip(criterion):
    with criterion(2, "serialize/parse round trip") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2)
        alphabet = list("abcdefghij XYZ.,'\"{}[]:0123456789éü\n\t&")
        failures = 0
        for _ in range(10_000):
            words = ["".join(rng.choice(alphabet, size=rng.integers(0, 12))) for _ in range(3)]
            t = GUIACT.types[rng.integers(len(GUIACT.types))]
            pos = (int(rng.integers(0, 10_001)) / 10_000, int(rng.integers(0, 10_001)) / 10_000) \
                if GUIACT.is_spatial(t) else None
            a = GuiAction(t, words[2][::-1], pos)
            back = parse_turn(serialize_turn((words[0], words[1]), a, words[2]))
            failures += not (back.tags_ok and back.parsed_action == a and back.progress_estimation == words[0]
                             and back.decision_reasoning == words[1] and back.history_summary == words[2])
        elapsed = time.perf_counter() - t0
        info.update(turns=10_000, failures=failures, seconds=f"{elapsed:.2f}")
        assert failures == 0 and elapsed < 30


# ---------------------------------------------------------------- 3

def test_03_gradients(criterion):
    with criterion(3, "analytic gradients match finite differences") as info:
        t0 = time.perf_counter()
        ce_err, ce_n = gradcheck.run("ce", 100, seed=3)
        pg_err, pg_n = gradcheck.run("grpo", 100, seed=3)
        elapsed = time.perf_counter() - t0
        info.update(ce_cases=ce_n, ce_max_rel=f"{ce_err:.1e}", grpo_cases=pg_n, grpo_max_rel=f"{pg_err:.1e}",
                    seconds=f"{elapsed:.1f}")
        assert ce_n == pg_n == 100 and ce_err <= 1e-4 and pg_err <= 1e-4 and elapsed < 120


# ---------------------------------------------------------------- 4

def test_04_advantages(criterion):
    with criterion(4, "group-normalized advantages") as info:
        rng = np.random.default_rng(4)
        worst_mean = worst_std = worst_scale = 0.0
        degenerate = 0
        for i in range(10_000):
            g = int(rng.integers(2, 17))
            if i % 10 == 0:
                r = np.full(g, rng.normal())
            else:
                r = rng.normal(size=g) * rng.uniform(0.01, 5)
            a = compute_advantages(r)
            if np.std(r) < 1e-8:
                assert np.all(a == 0)
                degenerate += 1
                continue
            worst_mean = max(worst_mean, abs(a.mean()))
            worst_std = max(worst_std, abs(a.std() - 1))
            for c in (0.1, 10.0):
                worst_scale = max(worst_scale, float(np.max(np.abs(compute_advantages(r * c) - a))))
        info.update(groups=10_000, degenerate=degenerate, max_mean=f"{worst_mean:.1e}",
                    max_std_dev=f"{worst_std:.1e}", max_scale_diff=f"{worst_scale:.1e}")
        assert worst_mean <= 1e-9 and worst_std <= 1e-6 and worst_scale <= 1e-9 and degenerate == 1000


# ---------------------------------------------------------------- 5, 6

class GateAudit:
    def __init__(self):
        self.rollouts = 0
        self.violations = 0

    def __call__(self, groups):
        for g in groups:
            for r in g.rewards:
                self.rollouts += 1
                self.violations += r.r_a == 0 and r.r_h != 0


@pytest.fixture(scope="module")
def default_runs():
    audit = GateAudit()
    cfg = RunConfig()
    runs = {seed: train_and_eval(cfg, seed, on_groups=audit) for seed in SEEDS}
    return runs, audit


@pytest.mark.slow
def test_05_gate_law(criterion, default_runs):
    _, audit = default_runs
    with criterion(5, "history reward is zero whenever the action reward is zero") as info:
        info.update(rollouts=audit.rollouts, violations=audit.violations)
        assert audit.rollouts > 0 and audit.violations == 0


@pytest.mark.slow
def test_06_click_sequence(criterion, default_runs):
    runs, _ = default_runs
    with criterion(6, "SFT+GRPO Step SR on held-out click-sequence episodes") as info:
        srs = {s: aggregate(r.eval.rows)["Overall"]["Step SR"] for s, r in runs.items()}
        info.update(**{f"seed{s}": f"{v:.3f}" for s, v in srs.items()},
                    test_episodes=len({row.episode_id for row in runs[0].eval.rows}))
        assert all(v >= 0.9 for v in srs.values())


# ---------------------------------------------------------------- 7

MEMORY_CFG = """\
sim.task_family = memory-probe
sim.episode_length = 5,5
sim.n_candidates = 8
sft.steps = 40
"""


@pytest.mark.slow
def test_07_history_reward_ablation(criterion, tmp_path_factory):
    d = tmp_path_factory.mktemp("ablate")
    cfg = d / "memory.cfg"
    cfg.write_text(MEMORY_CFG)
    with criterion(7, "history reward helps final-step accuracy on memory-probe") as info:
        rc = main(["ablate", "--config", str(cfg), "--out", str(d), "--lambdas", "0.5,0", "--seeds", "0,1,2"])
        assert rc == 0
        with open(d / "ablate" / "comparison.csv") as fh:
            rows = list(csv.DictReader(fh))
        med = {lh: statistics.median(float(r["final_step_acc"]) for r in rows if r["lambda_h"] == lh)
               for lh in ("0.5", "0")}
        info.update(median_with=f"{med['0.5']:.3f}", median_without=f"{med['0']:.3f}",
                    report=str(d / "ablate" / "comparison.txt"))
        assert med["0.5"] >= med["0"]


# ---------------------------------------------------------------- 8

@pytest.mark.slow
def test_08_cold_start_matters(criterion):
    cfg = override(RunConfig(), "sim", grid=(6, 6), margin=0.3, value_vocab_size=32)
    cfg = override(cfg, "grpo", iterations=200)
    with criterion(8, "cold start unlocks position reward on a hard layout") as info:
        rl_only, warm = [], []
        for seed in SEEDS:
            for sft, bucket in ((False, rl_only), (True, warm)):
                res = train_and_eval(cfg, seed, sft=sft, evaluate=False)
                bucket.append(float(np.mean([s.mean_r_pos for s in res.grpo_stats])))
        info.update(rl_only=f"{np.mean(rl_only):.3f}", sft_rl=f"{np.mean(warm):.3f}")
        assert np.mean(rl_only) < 0.1 and np.mean(warm) > 0.3


# ---------------------------------------------------------------- 9

def test_09_scripted_policies(criterion):
    eps = generate_dataset(SimConfig(rng_seed=9), 700)
    with criterion(9, "metric pipeline on scripted policies") as info:
        oracle = aggregate(evaluate_policy(ScriptedOraclePolicy(eps), eps).rows)["Overall"]["Step SR"]
        rows = evaluate_policy(ScriptedCorruptPolicy(eps, 0.3, seed=9), eps).rows
        n = len(rows)
        k = sum(r.step_sr for r in rows)
        lo, hi = stats.binom.interval(0.99, n, 0.7)
        info.update(oracle=f"{oracle:.3f}", corrupt=f"{k / n:.4f}", steps=n, interval=f"[{lo / n:.4f},{hi / n:.4f}]")
        assert oracle == 1.0 and n >= 2000 and lo <= k <= hi


# ---------------------------------------------------------------- 10

def _repro_run(root, cfg, seed):
    root.mkdir()
    train, test = generate_splits(cfg, seed)
    write_episodes(root / "train.jsonl", train)
    write_episodes(root / "test.jsonl", test)
    with GrpoLogs(str(root / "steps.csv"), str(root / "iters.csv")) as logs:
        res = train_and_eval(cfg, seed, logs=logs, evaluate=False)
    save_params(root / "theta.npy", res.policy.theta)
    (root / "sft_loss.txt").write_text("\n".join(repr(x) for x in res.sft_loss))
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def test_10_reproducibility(criterion, tmp_path):
    cfg = override(RunConfig(), "grpo", iterations=40)
    cfg = override(cfg, "sft", steps=60)
    cfg = override(cfg, "data", sft_episodes=20, rl_episodes=40, test_episodes=20)
    with criterion(10, "identical config and seed give bit-identical artifacts") as info:
        a = _repro_run(tmp_path / "a", cfg, 5)
        b = _repro_run(tmp_path / "b", cfg, 5)
        differing = [k for k in a if a[k] != b.get(k)]
        theta = load_params(tmp_path / "a" / "theta.npy")
        info.update(files=len(a), differing=len(differing), theta_nonzero_rows=int(np.any(theta != 0, axis=1).sum()))
        assert set(a) == set(b) and not differing and np.any(theta != 0)
