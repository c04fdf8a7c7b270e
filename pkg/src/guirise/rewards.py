"""Format, action, history-summary and total rewards."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .grammar import _is_real, _load_record, _record_keys_error, MalformedRecord
from .trajectory import (
    DEFAULT_ACTION_SPACE,
    ActionSpace,
    AgentTurn,
    GuiAction,
    RewardBreakdown,
    RewardConfig,
    Step,
    point_in_box,
)


def format_reward(turn: AgentTurn) -> float:
    return 1.0 if turn.tags_ok else 0.0


def action_component_rewards(turn: AgentTurn, gt: GuiAction, gt_bbox: Optional[Sequence[float]],
                             space: ActionSpace = DEFAULT_ACTION_SPACE) -> tuple[float, float, float]:
    """(r_af, r_type, r_pos) for one predicted action against the ground truth.

    A record that fails the three-key check zeroes all three components.
    For non-spatial ground truth the position component follows the type match.
    """
    try:
        rec = _load_record(turn.action_text)
    except MalformedRecord:
        return (0.0, 0.0, 0.0)
    if _record_keys_error(rec) is not None:
        return (0.0, 0.0, 0.0)
    r_type = 1.0 if rec["action"] == gt.action_type else 0.0
    if space.is_spatial(gt.action_type):
        pos = rec["position"]
        ok = isinstance(pos, (list, tuple)) and len(pos) == 2 and all(_is_real(v) for v in pos)
        r_pos = 1.0 if ok and point_in_box(pos, gt_bbox) else 0.0
    else:
        r_pos = r_type
    return (1.0, r_type, r_pos)


def action_reward(components: Sequence[float], cfg: RewardConfig) -> float:
    r_af, r_type, r_pos = components
    return r_af + cfg.lambda_type * r_type + cfg.lambda_pos * r_pos


def total_reward(r_f: float, r_a: float, r_h: float, cfg: RewardConfig) -> float:
    return r_f + cfg.lambda_a * r_a + cfg.lambda_h * r_h


def history_summary_reward(summary: str, r_a: float, next_step: Optional[Step], instruction: str,
                           policy, cfg: RewardConfig, rng: Optional[np.random.Generator] = None,
                           space: ActionSpace = DEFAULT_ACTION_SPACE) -> float:
    """Mean next-step action reward of k rollouts conditioned on ``summary``.

    Zero when the current action earned nothing or there is no next step.
    Rollouts only sample; nothing here records gradients.
    """
    from .policy.base import PolicyContext, PolicyUnavailable

    if r_a == 0 or next_step is None:
        return 0.0
    if not callable(getattr(policy, "sample", None)):
        raise PolicyUnavailable(f"{type(policy).__name__} cannot sample")
    ctx = PolicyContext(instruction, next_step.observation, summary.strip())
    if cfg.stochastic_history:
        samples = policy.sample(ctx, cfg.k_rollouts, mode="stochastic", rng=rng)
    else:
        # greedy decodes are identical, so one evaluation stands for all k
        samples = policy.sample(ctx, 1, mode="greedy", rng=rng) * cfg.k_rollouts
    scores = [
        action_reward(action_component_rewards(s.turn, next_step.gt_action, next_step.gt_bbox, space), cfg)
        for s in samples
    ]
    return float(sum(scores)) / cfg.k_rollouts


def score_turn(turn: AgentTurn, step: Step, r_h: float, cfg: RewardConfig,
               space: ActionSpace = DEFAULT_ACTION_SPACE) -> RewardBreakdown:
    r_f = format_reward(turn)
    comps = action_component_rewards(turn, step.gt_action, step.gt_bbox, space)
    r_a = action_reward(comps, cfg)
    return RewardBreakdown(r_f, comps[0], comps[1], comps[2], r_a, r_h, total_reward(r_f, r_a, r_h, cfg))
