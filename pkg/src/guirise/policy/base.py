"""Policy contract shared by the toy, scripted and remote policies.

A policy maps a :class:`PolicyContext` (instruction, current screen,
previous history summary) to sampled turns. Policies keep no state between
turns: everything the next step needs travels in the history text.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from ..trajectory import AgentTurn, Observation


class PolicyUnavailable(RuntimeError):
    pass


class RemoteUnreachable(PolicyUnavailable):
    pass


class MalformedResponse(RuntimeError):
    pass


class UnknownToken(ValueError):
    pass


@dataclass(frozen=True)
class PolicyContext:
    instruction: str
    observation: Observation
    history: str = ""


@dataclass(frozen=True)
class SampledTurn:
    turn: AgentTurn
    token_ids: tuple[int, ...] = ()
    # None marks evaluation-only samples (no per-token log-probabilities).
    token_logprobs: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.token_logprobs is not None and len(self.token_logprobs) != len(self.token_ids):
            raise ValueError("token_ids and token_logprobs lengths differ")


class Policy(Protocol):
    def sample(self, ctx: PolicyContext, n: int, mode: str = "greedy",
               rng: Optional[np.random.Generator] = None) -> list[SampledTurn]:
        ...
