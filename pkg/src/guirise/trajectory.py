"""Shared domain types: screens, actions, episodes, agent turns and configs.

All types are frozen dataclasses. Coordinates are normalized to [0, 1];
use :func:`normalize_bbox` / :func:`normalize_point` to convert pixels.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

SCHEMA_HEADER = "#schema=1"

ELEMENT_KINDS = ("button", "field", "link", "toggle")

BBox = tuple[float, float, float, float]
Point = tuple[float, float]


@dataclass(frozen=True)
class ActionSpace:
    """Finite action-type vocabulary plus which types carry coordinates."""

    types: tuple[str, ...]
    spatial: frozenset[str]

    def __contains__(self, action_type: object) -> bool:
        return action_type in self.types

    def is_spatial(self, action_type: str) -> bool:
        return action_type in self.spatial


GUIACT = ActionSpace(
    types=("CLICK", "HOVER", "TAP", "INPUT", "SCROLL", "SWIPE", "SELECT TEXT", "COPY", "ENTER", "SELECT", "ANSWER"),
    spatial=frozenset({"CLICK", "HOVER", "TAP", "INPUT", "SWIPE", "SELECT TEXT", "SELECT"}),
)
MIND2WEB = ActionSpace(types=("CLICK", "TYPE", "SELECT"), spatial=frozenset({"CLICK", "TYPE", "SELECT"}))
MINIWOB = ActionSpace(types=("CLICK", "TYPE"), spatial=frozenset({"CLICK", "TYPE"}))
AITW = ActionSpace(
    types=(
        "CLICK", "TYPE", "SELECT", "SCROLL UP", "SCROLL DOWN", "SCROLL LEFT", "SCROLL RIGHT",
        "PRESS BACK", "PRESS HOME", "PRESS ENTER", "STATUS TASK COMPLETE", "STATUS TASK IMPOSSIBLE",
    ),
    spatial=frozenset({"CLICK", "TYPE", "SELECT"}),
)
# Subset of GUIACT used by the synthetic simulator.
SIM_ACTIONS = ActionSpace(types=("CLICK", "INPUT", "ENTER"), spatial=frozenset({"CLICK", "INPUT"}))

ACTION_SPACES = {"guiact": GUIACT, "mind2web": MIND2WEB, "miniwob": MINIWOB, "aitw": AITW, "sim": SIM_ACTIONS}
DEFAULT_ACTION_SPACE = GUIACT


def normalize_bbox(px_box: Sequence[float], width: int, height: int) -> BBox:
    x1, y1, x2, y2 = px_box
    return (x1 / width, y1 / height, x2 / width, y2 / height)


def normalize_point(px: Sequence[float], width: int, height: int) -> Point:
    return (px[0] / width, px[1] / height)


def point_in_box(point: Optional[Sequence[float]], box: Optional[Sequence[float]]) -> bool:
    """Boundary-inclusive containment; False when either side is missing."""
    if point is None or box is None:
        return False
    x, y = point
    x1, y1, x2, y2 = box
    return x1 <= x <= x2 and y1 <= y <= y2


def box_center(box: Sequence[float]) -> Point:
    x1, y1, x2, y2 = box
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


@dataclass(frozen=True)
class UiElement:
    element_id: str
    bbox: BBox
    label: str
    kind: str = "button"


@dataclass(frozen=True)
class Observation:
    width: int
    height: int
    elements: tuple[UiElement, ...]
    screen_ref: Optional[str] = None

    def element(self, element_id: str) -> UiElement:
        for el in self.elements:
            if el.element_id == element_id:
                return el
        raise KeyError(element_id)


@dataclass(frozen=True)
class GuiAction:
    action_type: str
    value: str = ""
    position: Optional[Point] = None

    def violations(self, space: ActionSpace = DEFAULT_ACTION_SPACE) -> list[str]:
        out = []
        if self.action_type not in space:
            out.append(f"action_type {self.action_type!r} not in action space")
            return out
        if space.is_spatial(self.action_type):
            if self.position is None:
                out.append(f"{self.action_type} requires a position")
            elif not _valid_point(self.position):
                out.append(f"position {self.position} outside [0,1]^2")
        elif self.position is not None:
            out.append(f"{self.action_type} must not carry a position")
        return out

    def op_string(self) -> str:
        return f"{self.action_type} {self.value}".strip()


@dataclass(frozen=True)
class Step:
    index: int
    observation: Observation
    gt_action: GuiAction
    gt_bbox: Optional[BBox] = None


@dataclass(frozen=True)
class Episode:
    episode_id: str
    instruction: str
    steps: tuple[Step, ...]
    # Free-form generator metadata (task family etc.); persisted alongside.
    meta: tuple[tuple[str, str], ...] = ()

    def meta_dict(self) -> dict[str, str]:
        return dict(self.meta)


@dataclass(frozen=True)
class AgentTurn:
    raw_text: str
    progress_estimation: str = ""
    decision_reasoning: str = ""
    action_text: str = ""
    parsed_action: Optional[GuiAction] = None
    history_summary: str = ""
    tags_ok: bool = False


@dataclass(frozen=True)
class RewardConfig:
    lambda_a: float = 1.0
    lambda_h: float = 0.5
    lambda_type: float = 1.0
    lambda_pos: float = 1.0
    k_rollouts: int = 4
    advantage_epsilon: float = 1e-8
    # Greedy history rollouts by default; True samples at temperature 1.
    stochastic_history: bool = False

    def __post_init__(self):
        for name in ("lambda_a", "lambda_h", "lambda_type", "lambda_pos"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if self.k_rollouts < 1:
            raise ValueError("k_rollouts must be >= 1")
        if not self.advantage_epsilon > 0:
            raise ValueError("advantage_epsilon must be positive")


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_epsilon: float = 0.2
    kl_beta: float = 0.04
    learning_rate: float = 0.5
    iterations: int = 2000
    batch_size: int = 2
    refresh_every: int = 1
    temperature: float = 1.0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0 or self.batch_size < 1 or self.refresh_every < 1:
            raise ValueError("iterations >= 0, batch_size >= 1, refresh_every >= 1 required")


@dataclass(frozen=True)
class RewardBreakdown:
    r_f: float
    r_af: float
    r_type: float
    r_pos: float
    r_a: float
    r_h: float
    total: float

    def recomputed_total(self, cfg: RewardConfig) -> float:
        return self.r_f + cfg.lambda_a * self.r_a + cfg.lambda_h * self.r_h

    def recomputed_action(self, cfg: RewardConfig) -> float:
        return self.r_af + cfg.lambda_type * self.r_type + cfg.lambda_pos * self.r_pos


def _valid_point(p) -> bool:
    try:
        x, y = p
    except (TypeError, ValueError):
        return False
    return all(isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0 for v in (x, y))


def _bbox_violations(box, where: str) -> list[str]:
    try:
        x1, y1, x2, y2 = box
    except (TypeError, ValueError):
        return [f"{where}: bbox must have 4 coordinates"]
    out = []
    if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in (x1, y1, x2, y2)):
        out.append(f"{where}: bbox {tuple(box)} outside [0,1]")
    if x1 > x2 or y1 > y2:
        out.append(f"{where}: bbox {tuple(box)} has x1>x2 or y1>y2")
    return out


def validate_episode(episode: Episode, space: ActionSpace = DEFAULT_ACTION_SPACE) -> list[str]:
    """Return a list of invariant violations; empty means the episode is well formed."""
    out: list[str] = []
    if not episode.steps:
        return ["steps non-empty"]
    for pos, step in enumerate(episode.steps):
        tag = f"step {step.index}"
        if step.index != pos:
            out.append(f"{tag}: index not contiguous (expected {pos})")
        obs = step.observation
        if obs.width <= 0 or obs.height <= 0:
            out.append(f"{tag}: observation size must be positive")
        ids = [el.element_id for el in obs.elements]
        if len(ids) != len(set(ids)):
            out.append(f"{tag}: duplicate element_id")
        for el in obs.elements:
            out.extend(_bbox_violations(el.bbox, f"{tag} element {el.element_id}"))
            if el.kind not in ELEMENT_KINDS:
                out.append(f"{tag} element {el.element_id}: unknown kind {el.kind!r}")
        act = step.gt_action
        out.extend(f"{tag}: {v}" for v in act.violations(space))
        if step.gt_bbox is not None:
            out.extend(_bbox_violations(step.gt_bbox, f"{tag} gt_bbox"))
        if act.position is not None:
            if step.gt_bbox is None:
                out.append(f"{tag}: spatial gt action without gt_bbox")
            elif not point_in_box(act.position, step.gt_bbox):
                out.append(f"{tag}: gt position {tuple(act.position)} outside gt_bbox {tuple(step.gt_bbox)}")
    return out


# ---------------------------------------------------------------- persistence

def episode_to_record(ep: Episode) -> dict:
    return {
        "episode_id": ep.episode_id,
        "instruction": ep.instruction,
        "steps": [
            {
                "index": s.index,
                "observation": {
                    "width": s.observation.width,
                    "height": s.observation.height,
                    "elements": [
                        {"element_id": e.element_id, "bbox": list(e.bbox), "label": e.label, "kind": e.kind}
                        for e in s.observation.elements
                    ],
                    "screen_ref": s.observation.screen_ref,
                },
                "gt_action": {
                    "action_type": s.gt_action.action_type,
                    "value": s.gt_action.value,
                    "position": None if s.gt_action.position is None else list(s.gt_action.position),
                },
                "gt_bbox": None if s.gt_bbox is None else list(s.gt_bbox),
            }
            for s in ep.steps
        ],
        "meta": dict(ep.meta),
    }


def episode_from_record(rec: dict) -> Episode:
    steps = []
    for s in rec["steps"]:
        o = s["observation"]
        obs = Observation(
            width=o["width"],
            height=o["height"],
            elements=tuple(
                UiElement(e["element_id"], tuple(e["bbox"]), e["label"], e["kind"]) for e in o["elements"]
            ),
            screen_ref=o.get("screen_ref"),
        )
        a = s["gt_action"]
        act = GuiAction(a["action_type"], a["value"], None if a["position"] is None else tuple(a["position"]))
        steps.append(Step(s["index"], obs, act, None if s["gt_bbox"] is None else tuple(s["gt_bbox"])))
    return Episode(rec["episode_id"], rec["instruction"], tuple(steps), tuple(sorted(rec.get("meta", {}).items())))


def dumps_episode(ep: Episode) -> str:
    return json.dumps(episode_to_record(ep), ensure_ascii=False, separators=(",", ":"))


def write_episodes(path, episodes: Iterable[Episode]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        for ep in episodes:
            fh.write(dumps_episode(ep) + "\n")


def read_episodes(path) -> list[Episode]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#schema="):
        raise ValueError(f"{path}: missing schema header")
    if lines[0].strip() != SCHEMA_HEADER:
        raise ValueError(f"{path}: unsupported schema {lines[0].strip()!r}")
    return [episode_from_record(json.loads(line)) for line in lines[1:] if line.strip()]
