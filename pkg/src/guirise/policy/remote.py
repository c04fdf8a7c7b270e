"""HTTP client for policies served elsewhere.

Request: POST {base}/v1/rollout with
    {"instruction": str, "history": str, "elements": [{"element_id", "bbox", "label", "kind"}],
     "n": int, "mode": "greedy" | "stochastic"}
Response: {"turns": [{"text": str, "token_logprobs": [float, ...] (optional)}]}
"""
from __future__ import annotations

import json
import socket
import urllib.error
import urllib.request
from typing import Optional

import numpy as np

from ..grammar import parse_turn
from ..trajectory import SIM_ACTIONS, ActionSpace
from .base import MalformedResponse, PolicyContext, RemoteUnreachable, SampledTurn


def rollout_request(ctx: PolicyContext, n: int, mode: str) -> dict:
    return {
        "instruction": ctx.instruction,
        "history": ctx.history,
        "elements": [
            {"element_id": e.element_id, "bbox": list(e.bbox), "label": e.label, "kind": e.kind}
            for e in ctx.observation.elements
        ],
        "n": n,
        "mode": mode,
    }


class RemotePolicy:
    def __init__(self, base_url: str, timeout: float = 30.0, space: ActionSpace = SIM_ACTIONS):
        self.url = base_url.rstrip("/") + "/v1/rollout"
        self.timeout = timeout
        self.space = space

    def sample(self, ctx: PolicyContext, n: int = 1, mode: str = "greedy",
               rng: Optional[np.random.Generator] = None) -> list[SampledTurn]:
        return remote_rollout(self, ctx, n, mode)


def remote_rollout(client: RemotePolicy, ctx: PolicyContext, n: int, mode: str = "greedy") -> list[SampledTurn]:
    """Turns without log-probabilities are evaluation-only (unusable for ratios)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    body = json.dumps(rollout_request(ctx, n, mode), ensure_ascii=False).encode("utf-8")
    req = urllib.request.Request(client.url, data=body, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=client.timeout) as resp:
            raw = resp.read().decode("utf-8")
    except (urllib.error.URLError, socket.timeout, TimeoutError, OSError) as exc:
        raise RemoteUnreachable(f"{client.url}: {exc}") from exc
    try:
        turns = json.loads(raw)["turns"]
        if not isinstance(turns, list) or len(turns) != n:
            raise ValueError(f"expected {n} turns")
        out = []
        for t in turns:
            text = t["text"]
            if not isinstance(text, str):
                raise ValueError("text must be a string")
            lps = t.get("token_logprobs")
            if lps is None:
                out.append(SampledTurn(parse_turn(text, client.space)))
            else:
                lps = tuple(float(x) for x in lps)
                # remote token ids are opaque; keep placeholders aligned with the logprobs
                out.append(SampledTurn(parse_turn(text, client.space), (-1,) * len(lps), lps))
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise MalformedResponse(f"bad rollout response: {exc}") from exc
    return out
