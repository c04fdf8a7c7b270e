"""Central finite-difference checks for the analytic policy gradients.

Each case draws a random parameter matrix, a simulator context with a random
history and a token sequence, then compares the analytic directional
derivative g.d with (f(theta + h d) - f(theta - h d)) / 2h along a random
direction d supported on the rows the sequence touches (feature rows and
pointer rows alike).
"""
from __future__ import annotations

import numpy as np

from guirise.grpo import RolloutGroup, grpo_objective
from guirise.policy import ToyPolicy, sim_vocab
from guirise.policy.base import PolicyContext, SampledTurn
from guirise.sft import ce_loss
from guirise.sim import SimConfig, generate_dataset

H = 1e-5
N_BUCKETS = 1 << 9

_FAMILIES = (
    SimConfig(task_family="click-sequence"),
    SimConfig(task_family="fill-and-submit", episode_length=(3, 4)),
    SimConfig(task_family="search-then-select"),
    SimConfig(task_family="memory-probe", episode_length=(3, 4)),
)


def _setup(seed):
    rng = np.random.default_rng(seed)
    cfg = _FAMILIES[seed % len(_FAMILIES)]
    policy = ToyPolicy(sim_vocab(cfg), N_BUCKETS)
    ep = generate_dataset(cfg, 1, start=int(rng.integers(1000)))[0]
    step = ep.steps[int(rng.integers(len(ep.steps)))]
    words = [w for w in policy.vocab.tokens if w.isalpha()]
    history = " ".join(rng.choice(words, size=int(rng.integers(0, 8))))
    # mention an on-screen label so pointer slots are active
    history += " " + step.observation.elements[0].label if step.observation.elements else ""
    ctx = PolicyContext(ep.instruction, step.observation, history.strip())
    theta = rng.normal(scale=0.3, size=(N_BUCKETS, policy.V))
    return rng, policy, ctx, theta


def _direction(rng, rows, shape):
    d = np.zeros(shape)
    d[rows] = rng.normal(size=(rows.size, shape[1]))
    return d


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def ce_case(seed):
    rng, policy, ctx, theta = _setup(seed)
    L = int(rng.integers(1, 25))
    if rng.random() < 0.5:
        target = rng.integers(0, policy.V, size=L)
    else:
        target = np.asarray(policy.sample(ctx, 1, "stochastic", rng=rng, theta=theta)[0].token_ids)
    loss, grad = ce_loss(policy, ctx, target, theta)
    d = _direction(rng, grad.rows, theta.shape)
    fp = ce_loss(policy, ctx, target, theta + H * d)[0]
    fm = ce_loss(policy, ctx, target, theta - H * d)[0]
    has_ptr = policy.rows(ctx, target).ptr_rows.size > 0
    return _rel(grad.dot(d), (fp - fm) / (2 * H)), has_ptr


def grpo_case(seed, clip_epsilon=0.2, margin=1e-3):
    rng, policy, ctx, theta = _setup(seed)
    theta_old = theta + rng.normal(scale=0.05, size=theta.shape)
    theta_ref = theta + rng.normal(scale=0.2, size=theta.shape)
    G = int(rng.integers(2, 6))
    members = []
    for _ in range(G):
        ids = np.asarray(policy.sample(ctx, 1, "stochastic", rng=rng, theta=theta_old)[0].token_ids)[:20]
        old = policy.token_logprobs(ctx, ids, theta_old)
        members.append(SampledTurn(policy.decode(ids), tuple(int(i) for i in ids), tuple(old)))
    adv = rng.normal(size=G)
    group = RolloutGroup(ctx, members, [None] * G, adv)
    beta = float(rng.choice([0.0, 0.04, 0.5]))
    # stay away from the clip kinks, where the objective is not differentiable
    for m in members:
        b = np.exp(policy.token_logprobs(ctx, m.token_ids, theta) - np.asarray(m.token_logprobs))
        if np.min(np.abs(b - (1 + clip_epsilon))) < margin or np.min(np.abs(b - (1 - clip_epsilon))) < margin:
            return None, False
    J, grad, _ = grpo_objective(group, policy, theta, theta_ref, clip_epsilon, beta)
    d = _direction(rng, grad.rows, theta.shape)
    fp = grpo_objective(group, policy, theta + H * d, theta_ref, clip_epsilon, beta)[0]
    fm = grpo_objective(group, policy, theta - H * d, theta_ref, clip_epsilon, beta)[0]
    return _rel(grad.dot(d), (fp - fm) / (2 * H)), True


def run(kind, n, seed=0):
    """Max relative error over n cases (cases that land on a clip kink are redrawn)."""
    errs, ptr_cases = [], 0
    s = seed
    while len(errs) < n:
        err, flag = (ce_case if kind == "ce" else grpo_case)(s)
        s += 1
        if err is None:
            continue
        errs.append(err)
        ptr_cases += flag
    return max(errs), ptr_cases
