"""Scripted policies replaying ground-truth trajectories (for metric sanity runs)."""
from __future__ import annotations

import zlib
from typing import Optional, Sequence

import numpy as np

from ..grammar import parse_turn, serialize_turn
from ..trajectory import SIM_ACTIONS, ActionSpace, Episode, GuiAction
from .base import PolicyContext, PolicyUnavailable, SampledTurn


class ScriptedOraclePolicy:
    """Looks up the ground-truth action for (instruction, screen) and emits a well-formed turn."""

    def __init__(self, episodes: Sequence[Episode], space: ActionSpace = SIM_ACTIONS):
        self.space = space
        self._script: dict = {}
        for ep in episodes:
            for step in ep.steps:
                self._script[(ep.instruction, step.observation)] = (step.index, step.gt_action, step.gt_bbox)

    def lookup(self, ctx: PolicyContext):
        try:
            return self._script[(ctx.instruction, ctx.observation)]
        except KeyError:
            raise PolicyUnavailable("context not covered by the script") from None

    def _turn(self, t: int, action: GuiAction) -> SampledTurn:
        text = serialize_turn((f"step {t} .", f"{action.op_string().lower()} ."), action,
                              f"{t + 1} steps done .", self.space)
        return SampledTurn(parse_turn(text, self.space))

    def action_for(self, ctx: PolicyContext) -> GuiAction:
        return self.lookup(ctx)[1]

    def sample(self, ctx: PolicyContext, n: int = 1, mode: str = "greedy",
               rng: Optional[np.random.Generator] = None) -> list[SampledTurn]:
        if n < 1:
            raise ValueError("n must be >= 1")
        t = self.lookup(ctx)[0]
        return [self._turn(t, self.action_for(ctx))] * n


def _away_from(box) -> tuple[float, float]:
    # a point on the far side of the screen, never inside the box
    x1, y1, x2, y2 = box
    x = 1.0 if (x1 + x2) / 2 < 0.5 else 0.0
    y = 1.0 if (y1 + y2) / 2 < 0.5 else 0.0
    return (x, y)


class ScriptedCorruptPolicy(ScriptedOraclePolicy):
    """Oracle that fails each step independently with probability ``p``.

    The failure draw is keyed on (seed, instruction, screen) so it does not
    depend on call order.
    """

    def __init__(self, episodes: Sequence[Episode], p: float, seed: int = 0, space: ActionSpace = SIM_ACTIONS):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"corruption probability {p} outside [0,1]")
        super().__init__(episodes, space)
        self.p = p
        self.seed = seed

    def _fails(self, ctx: PolicyContext, t: int) -> bool:
        key = zlib.crc32(f"{ctx.instruction}\x00{ctx.observation.screen_ref}\x00{t}".encode("utf-8"))
        return bool(np.random.default_rng([self.seed, key]).random() < self.p)

    def action_for(self, ctx: PolicyContext) -> GuiAction:
        t, gt, box = self.lookup(ctx)
        if not self._fails(ctx, t):
            return gt
        if box is not None:
            return GuiAction(gt.action_type, gt.value, _away_from(box))
        # non-spatial step: swap to some other type
        other = next(a for a in self.space.types if a != gt.action_type)
        pos = (0.5, 0.5) if self.space.is_spatial(other) else None
        return GuiAction(other, gt.value, pos)
