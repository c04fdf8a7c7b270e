"""Retrospective pseudo-labeling of ground-truth trajectories.

Each step is labeled with the instruction, the ground-truth action and the
summary produced for the previous step, so summaries chain forward.
"""
from __future__ import annotations

import json
import logging
import re
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

from .grammar import extract_blocks, serialize_action
from .policy.base import MalformedResponse, RemoteUnreachable
from .prompts import PROMPT_SINGLE_WEB
from .sft import PseudoLabel
from .trajectory import Episode, GuiAction, Observation

log = logging.getLogger(__name__)

LABEL_TAGS = ("Progress Estimation", "Decision Reasoning", "History Summary")


class LabelParseFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class LabelRequest:
    episode_id: str
    t: int
    instruction: str
    observation: Observation
    action: GuiAction
    prev_summary: str
    meta: dict = field(default_factory=dict, hash=False, compare=False)


class LabelerClient(Protocol):
    def complete(self, prompt: str, request: LabelRequest) -> str:
        ...


def render_prompt(instruction: str, action: GuiAction, prev_summary: str, thought: str = "",
                  template: str = PROMPT_SINGLE_WEB) -> str:
    return template.format(_TASK=instruction, _ACTION=serialize_action(action), _THOUGHT=thought,
                           _MEMO=prev_summary)


def parse_label_response(text: str) -> tuple[str, str, str]:
    blocks = extract_blocks(text, LABEL_TAGS)
    missing = [k for k, v in blocks.items() if v is None]
    if missing:
        raise LabelParseFailure(f"response lacks block(s) {missing}")
    return tuple(blocks[k].strip() for k in LABEL_TAGS)


def label_trajectory(episode: Episode, client: LabelerClient, template: str = PROMPT_SINGLE_WEB,
                     thought: str = "", max_retries: int = 2) -> list[PseudoLabel]:
    """Label every step in order. Raises LabelParseFailure once a step exhausts its retries."""
    labels = []
    prev = ""
    meta = episode.meta_dict()
    for step in episode.steps:
        req = LabelRequest(episode.episode_id, step.index, episode.instruction, step.observation,
                           step.gt_action, prev, meta)
        prompt = render_prompt(episode.instruction, step.gt_action, prev, thought, template)
        for attempt in range(max_retries + 1):
            try:
                progress, decision, summary = parse_label_response(client.complete(prompt, req))
                break
            except LabelParseFailure:
                log.warning("%s step %d: unparseable label (attempt %d)", episode.episode_id, step.index, attempt + 1)
        else:
            raise LabelParseFailure(f"{episode.episode_id} step {step.index}: no valid label after "
                                    f"{max_retries + 1} attempts")
        labels.append(PseudoLabel(episode.episode_id, step.index, progress, decision, summary, step.gt_action))
        prev = summary
    return labels


def label_episodes(episodes: Sequence[Episode], client: LabelerClient, workers: int = 1,
                   **kwargs) -> tuple[dict[str, list[PseudoLabel]], list[str]]:
    """Label trajectories (in parallel); returns labels by episode and the rejected ids."""
    def one(ep):
        try:
            return label_trajectory(ep, client, **kwargs)
        except LabelParseFailure:
            return None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, episodes))
    else:
        results = [one(ep) for ep in episodes]
    labels, rejected = {}, []
    for ep, res in zip(episodes, results):
        if res is None:
            rejected.append(ep.episode_id)
        else:
            labels[ep.episode_id] = res
    return labels, rejected


# ---------------------------------------------------------------- clients

_DECISION = {"CLICK": "click {v} .", "INPUT": "type {v} .", "ENTER": "press enter ."}
_CLAUSE = {"CLICK": "clicked {v} .", "INPUT": "typed {v} .", "ENTER": "pressed enter ."}
_CODE_RE = re.compile(r"code (\S+) \.")


class MockLabelerClient:
    """Deterministic template labeler driven by the simulator's task program."""

    def complete(self, prompt: str, request: LabelRequest) -> str:
        a, t = request.action, request.t
        v = a.value
        progress = "starting the task ." if t == 0 else f"{t} steps done ."
        decision = _DECISION.get(a.action_type, a.action_type.lower() + " {v} .").format(v=v)
        clause = _CLAUSE.get(a.action_type, a.action_type.lower() + " {v} .").format(v=v)
        if request.meta.get("family") == "memory-probe":
            m = _CODE_RE.search(request.prev_summary)
            code = v if t == 0 or m is None else m.group(1)
            summary = f"code {code} . {clause}"
        else:
            clauses = [c.strip() + " ." for c in request.prev_summary.split(" .") if c.strip()]
            summary = (clauses[-1] + " " if clauses else "") + clause
        return (
            f"<Progress Estimation>\n{progress}\n</Progress Estimation>\n"
            f"<Decision Reasoning>\n{decision}\n</Decision Reasoning>\n"
            f"<History Summary>\n{summary}\n</History Summary>"
        )


class RemoteLabelerClient:
    """POST {url}/v1/label with {"prompt": ...}; expects {"text": ...}.

    Every request/response pair is appended to ``audit_path`` as one JSON line.
    """

    def __init__(self, url: str, timeout: float = 30.0, audit_path: Optional[str] = None):
        self.url = url.rstrip("/") + "/v1/label"
        self.timeout = timeout
        self.audit_path = audit_path
        self._lock = threading.Lock()

    def complete(self, prompt: str, request: LabelRequest) -> str:
        body = json.dumps({"prompt": prompt}).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read().decode("utf-8")
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise RemoteUnreachable(f"{self.url}: {exc}") from exc
        try:
            text = json.loads(raw)["text"]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponse(f"bad labeler response: {raw[:80]!r}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("labeler 'text' must be a string")
        if self.audit_path:
            with self._lock, open(self.audit_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"episode_id": request.episode_id, "t": request.t,
                                     "prompt": prompt, "text": text}, ensure_ascii=False) + "\n")
        return text
