"""Group-relative policy optimization over the toy policy.

Each training context (an episode step with its teacher-forced history)
gets G sampled turns. Their total rewards are normalized within the group
and the clipped token-level surrogate with a per-token KL penalty toward the
frozen reference is ascended by one plain gradient step.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .policy.base import PolicyContext, SampledTurn
from .policy.toy import GradAccumulator, SparseGrad, ToyPolicy
from .rewards import action_component_rewards, action_reward, format_reward, history_summary_reward, total_reward
from .sft import PseudoLabel
from .trajectory import Episode, GrpoConfig, RewardBreakdown, RewardConfig

log = logging.getLogger(__name__)

STEP_LOG_COLUMNS = ("iter", "episode_id", "t", "i", "r_f", "r_af", "r_type", "r_pos", "r_a", "r_h", "total")
ITER_LOG_COLUMNS = ("iter", "mean_reward", "mean_r_f", "mean_r_a", "mean_r_h", "objective", "kl")


class DimensionMismatch(ValueError):
    pass


class GateLawViolation(AssertionError):
    pass


def compute_advantages(rewards: Sequence[float], epsilon: float = 1e-8) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("need a group of at least 2 rewards")
    std = r.std()  # population std
    if std < epsilon:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_categorical(logp: np.ndarray, logq: np.ndarray) -> np.ndarray:
    """KL(p || q) along the last axis, from log-probabilities."""
    return np.sum(np.exp(logp) * (logp - logq), axis=-1)


def kl_token(policy: ToyPolicy, ctx: PolicyContext, token_ids, theta: np.ndarray, theta_ref: np.ndarray) -> np.ndarray:
    """Exact per-position KL(pi_theta || pi_ref) along a token sequence."""
    rows = policy.rows(ctx, token_ids)
    return kl_categorical(policy.log_probs(rows, theta), policy.log_probs(rows, theta_ref))


@dataclass
class TrainerState:
    """theta is shared with the policy; theta_ref is a read-only post-SFT copy."""

    theta: np.ndarray
    theta_ref: np.ndarray
    theta_old: Optional[np.ndarray] = None  # None: identical to theta (refresh every iteration)
    iteration: int = 0
    learning_rate: float = 0.5

    @classmethod
    def from_policy(cls, policy: ToyPolicy, learning_rate: float, refresh_every: int = 1) -> "TrainerState":
        ref = policy.theta.copy()
        ref.flags.writeable = False
        old = None if refresh_every == 1 else policy.theta.copy()
        return cls(policy.theta, ref, old, 0, learning_rate)

    def sampling_theta(self) -> np.ndarray:
        return self.theta if self.theta_old is None else self.theta_old

    def refresh(self, refresh_every: int) -> None:
        if self.theta_old is not None and self.iteration % refresh_every == 0:
            self.theta_old[...] = self.theta


@dataclass
class RolloutGroup:
    context: PolicyContext
    members: list[SampledTurn]
    rewards: list[RewardBreakdown]
    advantages: np.ndarray
    episode_id: str = ""
    t: int = 0

    def __post_init__(self):
        if not (len(self.members) == len(self.rewards) == len(self.advantages)):
            raise DimensionMismatch("members, rewards and advantages differ in length")


def grpo_objective(group: RolloutGroup, policy: ToyPolicy, theta: np.ndarray, theta_ref: np.ndarray,
                   clip_epsilon: float, kl_beta: float) -> tuple[float, SparseGrad, float]:
    """Clipped surrogate minus per-token KL, token-mean then member-mean.

    Returns (J, dJ/dtheta, mean token KL). Old log-probabilities come from the
    members' sampling bookkeeping. Clipped tokens carry no policy gradient;
    the KL term always does.
    """
    if theta.shape != theta_ref.shape or theta.shape[1] != policy.V:
        raise DimensionMismatch(f"theta {theta.shape} vs ref {theta_ref.shape} (V={policy.V})")
    G = len(group.members)
    acc = GradAccumulator(policy.V)
    J = 0.0
    kl_sum = 0.0
    for m, A in zip(group.members, group.advantages):
        if m.token_logprobs is None:
            raise DimensionMismatch("member has no sampling log-probabilities")
        ids = np.asarray(m.token_ids, dtype=np.int64)
        L = ids.size
        old = np.asarray(m.token_logprobs)
        rows = policy.rows(group.context, ids)
        logp = policy.log_probs(rows, theta)
        logq = policy.log_probs(rows, theta_ref)
        p = np.exp(logp)
        idx = np.arange(L)
        b = np.exp(logp[idx, ids] - old)
        clipped = np.clip(b, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
        kl = np.sum(p * (logp - logq), axis=1)
        J += np.mean(np.minimum(b * A, clipped * A) - kl_beta * kl)
        kl_sum += kl.mean()
        if A > 0:
            active = b < 1.0 + clip_epsilon
        elif A < 0:
            active = b > 1.0 - clip_epsilon
        else:
            active = np.zeros(L, dtype=bool)
        coef = A * b * active
        dz = -coef[:, None] * p
        dz[idx, ids] += coef
        if kl_beta:
            dz -= kl_beta * p * (logp - logq - kl[:, None])
        acc.add(rows, dz / (L * G))
    return J / G, acc.result(), kl_sum / G


# ---------------------------------------------------------------- training loop

@dataclass(frozen=True)
class TrainItem:
    """One teacher-forced training context: step t of an episode with history h'_{t-1}."""

    episode: Episode
    t: int
    history: str

    @property
    def context(self) -> PolicyContext:
        return PolicyContext(self.episode.instruction, self.episode.steps[self.t].observation, self.history)


def build_items(episodes: Sequence[Episode], labels: Optional[dict[str, Sequence[PseudoLabel]]] = None) -> list[TrainItem]:
    """All (episode, step) contexts; histories come from pseudo-labels when given, else empty."""
    items = []
    for ep in episodes:
        prev = ""
        eplabels = labels.get(ep.episode_id) if labels else None
        for t in range(len(ep.steps)):
            items.append(TrainItem(ep, t, prev))
            if eplabels is not None:
                prev = eplabels[t].summary
    return items


@dataclass
class IterStats:
    iteration: int
    mean_reward: float
    mean_r_f: float
    mean_r_a: float
    mean_r_h: float
    objective: float
    kl: float
    mean_r_pos: float = 0.0

    def row(self) -> list:
        return [self.iteration, self.mean_reward, self.mean_r_f, self.mean_r_a, self.mean_r_h, self.objective, self.kl]


def rollout_group(item: TrainItem, policy: ToyPolicy, state: TrainerState, reward_cfg: RewardConfig,
                  grpo_cfg: GrpoConfig, rng: np.random.Generator) -> RolloutGroup:
    ctx = item.context
    ep = item.episode
    step = ep.steps[item.t]
    nxt = ep.steps[item.t + 1] if item.t + 1 < len(ep.steps) else None
    members = policy.sample(ctx, grpo_cfg.group_size, "stochastic", rng=rng, theta=state.sampling_theta(),
                            temperature=grpo_cfg.temperature)
    rh_cache: dict[str, float] = {}
    rewards = []
    for m in members:
        turn = m.turn
        r_f = format_reward(turn)
        comps = action_component_rewards(turn, step.gt_action, step.gt_bbox, policy.space)
        r_a = action_reward(comps, reward_cfg)
        key = turn.history_summary.strip()
        if reward_cfg.lambda_h == 0:
            r_h = 0.0  # weight zero: skip the rollouts, the term cannot matter
        elif r_a == 0 or nxt is None:
            r_h = history_summary_reward(key, r_a, nxt, ep.instruction, policy, reward_cfg, rng, policy.space)
        elif not reward_cfg.stochastic_history and key in rh_cache:
            r_h = rh_cache[key]
        else:
            r_h = history_summary_reward(key, r_a, nxt, ep.instruction, policy, reward_cfg, rng, policy.space)
            rh_cache[key] = r_h
        if r_a == 0 and r_h != 0:
            raise GateLawViolation(f"{ep.episode_id} t={item.t}: r_a=0 but r_h={r_h}")
        rewards.append(RewardBreakdown(r_f, comps[0], comps[1], comps[2], r_a, r_h,
                                       total_reward(r_f, r_a, r_h, reward_cfg)))
    adv = compute_advantages([r.total for r in rewards], reward_cfg.advantage_epsilon)
    return RolloutGroup(ctx, members, rewards, adv, ep.episode_id, item.t)


def train_step(items: Sequence[TrainItem], policy: ToyPolicy, state: TrainerState, reward_cfg: RewardConfig,
               grpo_cfg: GrpoConfig, rng: np.random.Generator) -> tuple[list[RolloutGroup], IterStats]:
    """Sample, score, normalize, take one ascent step on the batch-mean objective."""
    groups = [rollout_group(it, policy, state, reward_cfg, grpo_cfg, rng) for it in items]
    acc = GradAccumulator(policy.V)
    J = kl = 0.0
    for g in groups:
        Jg, grad, klg = grpo_objective(g, policy, state.theta, state.theta_ref, grpo_cfg.clip_epsilon,
                                       grpo_cfg.kl_beta)
        J += Jg / len(groups)
        kl += klg / len(groups)
        acc.add_sparse(grad, 1.0 / len(groups))
    grad = acc.result()
    state.theta[grad.rows] += state.learning_rate * grad.values
    state.iteration += 1
    state.refresh(grpo_cfg.refresh_every)
    rs = [r for g in groups for r in g.rewards]
    stats = IterStats(state.iteration, float(np.mean([r.total for r in rs])), float(np.mean([r.r_f for r in rs])),
                      float(np.mean([r.r_a for r in rs])), float(np.mean([r.r_h for r in rs])), float(J), float(kl),
                      float(np.mean([r.r_pos for r in rs])))
    return groups, stats


@dataclass
class GrpoLogs:
    """Optional CSV sinks; rows are written by the single training thread."""

    step_path: Optional[str] = None
    iter_path: Optional[str] = None
    _files: list = field(default_factory=list)

    def __enter__(self):
        self.step_writer = self.iter_writer = None
        if self.step_path:
            fh = open(self.step_path, "w", newline="", encoding="utf-8")
            self._files.append(fh)
            self.step_writer = csv.writer(fh, lineterminator="\n")
            self.step_writer.writerow(STEP_LOG_COLUMNS)
        if self.iter_path:
            fh = open(self.iter_path, "w", newline="", encoding="utf-8")
            self._files.append(fh)
            self.iter_writer = csv.writer(fh, lineterminator="\n")
            self.iter_writer.writerow(ITER_LOG_COLUMNS)
        return self

    def __exit__(self, *exc):
        for fh in self._files:
            fh.close()
        self._files.clear()

    def write(self, groups: Sequence[RolloutGroup], stats: IterStats) -> None:
        if self.step_writer is not None:
            for g in groups:
                for i, r in enumerate(g.rewards):
                    self.step_writer.writerow([stats.iteration, g.episode_id, g.t, i, r.r_f, r.r_af, r.r_type,
                                               r.r_pos, r.r_a, r.r_h, r.total])
        if self.iter_writer is not None:
            self.iter_writer.writerow(stats.row())


def train_grpo(policy: ToyPolicy, items: Sequence[TrainItem], reward_cfg: RewardConfig, grpo_cfg: GrpoConfig,
               rng: np.random.Generator, logs: Optional[GrpoLogs] = None,
               on_groups: Optional[Callable[[list[RolloutGroup]], None]] = None) -> list[IterStats]:
    """Run grpo_cfg.iterations steps over uniformly drawn training contexts.

    The reference policy is the policy's parameters at entry.
    """
    if not items:
        raise ValueError("no training contexts")
    state = TrainerState.from_policy(policy, grpo_cfg.learning_rate, grpo_cfg.refresh_every)
    history = []
    for it in range(grpo_cfg.iterations):
        batch = [items[int(j)] for j in rng.integers(0, len(items), grpo_cfg.batch_size)]
        groups, stats = train_step(batch, policy, state, reward_cfg, grpo_cfg, rng)
        if logs is not None:
            logs.write(groups, stats)
        if on_groups is not None:
            on_groups(groups)
        history.append(stats)
        if it % 100 == 0:
            log.info("grpo iter %d reward %.3f r_a %.3f kl %.4f", stats.iteration, stats.mean_reward,
                     stats.mean_r_a, stats.kl)
    return history
