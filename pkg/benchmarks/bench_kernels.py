#!/usr/bin/env python3
"""Numba vs numpy timing for the toy-policy kernels.

Times the three operations one GRPO iteration is made of (sampling a
sequence, gathering its logits, scattering a gradient) on simulator
contexts, with both backends, after a warm-up call that triggers JIT
compilation. Also checks the two backends agree.

    python3 benchmarks/bench_kernels.py [--reps 200] [--contexts 32]
"""
import argparse
import time

import numpy as np

from guirise.config import RunConfig, override
from guirise.pipeline import generate_splits, make_policy, run_label, run_sft
from guirise.policy import kernels
from guirise.policy.base import PolicyContext
from guirise.policy.toy import GradAccumulator


def _contexts(episodes, n):
    out = []
    for ep in episodes:
        for step in ep.steps:
            out.append(PolicyContext(ep.instruction, step.observation, ""))
    return out[:n]


def _time(fn, reps):
    fn()  # warm-up (compiles on the numba backend)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--contexts", type=int, default=32)
    ap.add_argument("--sft-steps", type=int, default=100, help="train a little so logits are not all zero")
    args = ap.parse_args()

    cfg = RunConfig()
    train, _ = generate_splits(cfg, 0)
    policy = make_policy(cfg)
    labels, _ = run_label(train[:20], cfg)
    run_sft(policy, train, labels, override(cfg, "sft", steps=args.sft_steps), 0)
    ctxs = _contexts(train, args.contexts)
    rng = np.random.default_rng(0)
    uniforms = rng.random((len(ctxs), policy.max_len))
    turns = [policy.sample(c, 1, "greedy")[0].token_ids for c in ctxs]

    def do_sample():
        for c, u in zip(ctxs, uniforms):
            cf = policy.features(c)
            kernels.sample_sequence(policy.theta, cf.feat, cf.ptr_feat, cf.ptr_tok, policy.tables, u, False, 1.0,
                                    policy.n_buckets)

    def do_gather():
        for c, t in zip(ctxs, turns):
            policy.log_probs(policy.rows(c, t))

    def do_scatter():
        acc = GradAccumulator(policy.V)
        for c, t in zip(ctxs, turns):
            idx = policy.rows(c, t)
            acc.add(idx, np.ones((len(t), policy.V)))
        acc.result()

    results = {}
    for backend in ("numpy", "numba"):
        kernels.set_backend(backend)
        results[backend] = {name: _time(fn, args.reps) / len(ctxs)
                            for name, fn in (("sample", do_sample), ("gather", do_gather), ("scatter", do_scatter))}
        samples = [kernels.sample_sequence(policy.theta, policy.features(c).feat, policy.features(c).ptr_feat,
                                           policy.features(c).ptr_tok, policy.tables, u, False, 1.0,
                                           policy.n_buckets)[0] for c, u in zip(ctxs, uniforms)]
        results[backend]["_samples"] = samples

    same = all(np.array_equal(a, b) for a, b in zip(results["numpy"]["_samples"], results["numba"]["_samples"]))
    print(f"{len(ctxs)} contexts, {args.reps} reps, mean turn length "
          f"{np.mean([len(t) for t in turns]):.1f} tokens; backends agree: {same}")
    print(f"{'kernel':<10}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name in ("sample", "gather", "scatter"):
        a, b = results["numpy"][name] * 1e3, results["numba"][name] * 1e3
        print(f"{name:<10}{a:>12.3f}{b:>12.3f}{a / b:>9.1f}x")


if __name__ == "__main__":
    main()
