"""Seedable synthetic GUI tasks with deterministic screen transitions.

Screens are symbolic element lists laid out on a rows x cols grid. Each
episode is a hidden program: one goal action (with its target box) and one
screen per step. A correct action advances the program and swaps in the
next screen; anything else only bumps a no-op counter.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .trajectory import (
    SIM_ACTIONS,
    ActionSpace,
    Episode,
    GuiAction,
    Observation,
    Step,
    UiElement,
    box_center,
    point_in_box,
)

FAMILIES = ("click-sequence", "fill-and-submit", "search-then-select", "memory-probe")

# Capitalized UI labels; none collides with an instruction or template word.
LABELS = (
    "Apply", "Cart", "Home", "Menu", "Save", "Share", "Edit", "Close",
    "Help", "Login", "Filter", "Profile", "Music", "Photos", "Maps", "Mail",
    "Notes", "Clock", "Weather", "News", "Books", "Games", "Wallet", "Camera",
    "Alarm", "Timer", "Files", "Chat", "Store", "Video", "Radio", "Print",
)
FILL_WORDS = ("alice", "bob", "paris", "tokyo", "red", "blue", "apple", "river",
              "lima", "oslo", "green", "delta", "echo", "kilo", "mango", "pearl")
NEXT_LABEL = "Next"
SEARCH_LABEL = "Search"


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    grid: tuple[int, int] = (4, 4)
    task_family: str = "click-sequence"
    episode_length: tuple[int, int] = (3, 3)
    value_vocab_size: int = 16
    rng_seed: int = 0
    margin: float = 0.1
    n_candidates: int = 4
    screen_size: tuple[int, int] = (1000, 1000)

    def __post_init__(self):
        rows, cols = self.grid
        lo, hi = self.episode_length
        if self.task_family not in FAMILIES:
            raise ValueError(f"task_family must be one of {FAMILIES}")
        if rows < 1 or cols < 1:
            raise ValueError("grid dimensions must be positive")
        if not 1 <= lo <= hi:
            raise ValueError("episode_length must satisfy 1 <= lo <= hi")
        if rows * cols < hi:
            raise ValueError("rows*cols must be >= episode_length upper bound")
        if not 2 <= self.value_vocab_size <= len(LABELS):
            raise ValueError(f"value_vocab_size must be in [2, {len(LABELS)}]")
        if not 0 <= self.margin < 0.5:
            raise ValueError("margin must be in [0, 0.5)")
        if self.task_family == "click-sequence" and min(rows * cols, self.value_vocab_size) < hi:
            raise ValueError("click-sequence needs at least episode_length distinct labels")
        if self.task_family == "fill-and-submit":
            if lo < 2:
                raise ValueError("fill-and-submit needs episode_length >= 2")
            if hi - 1 > min(rows * cols, self.value_vocab_size, len(self.fill_words)):
                raise ValueError("fill-and-submit has more fields than labels or fill words")
        if self.task_family == "search-then-select" and (lo, hi) != (3, 3):
            raise ValueError("search-then-select episodes always have length 3")
        if self.task_family == "memory-probe":
            if lo < 2:
                raise ValueError("memory-probe needs episode_length >= 2")
            if not 2 <= self.n_candidates <= min(rows * cols, self.value_vocab_size):
                raise ValueError("n_candidates must be in [2, min(slots, vocab)]")

    @property
    def labels(self) -> tuple[str, ...]:
        return LABELS[: self.value_vocab_size]

    @property
    def fill_words(self) -> tuple[str, ...]:
        return FILL_WORDS[: max(2, min(len(FILL_WORDS), self.value_vocab_size))]

    @property
    def value_vocab(self) -> tuple[str, ...]:
        return self.labels + self.fill_words + (NEXT_LABEL, SEARCH_LABEL, "")

    @property
    def action_space(self) -> ActionSpace:
        return SIM_ACTIONS


@dataclass(frozen=True)
class Goal:
    action: GuiAction
    bbox: Optional[tuple[float, float, float, float]]
    screen: Observation


@dataclass(frozen=True)
class SimState:
    instruction: str
    program: tuple[Goal, ...]
    final_screen: Observation
    goal_index: int = 0
    noop_count: int = 0

    @property
    def done(self) -> bool:
        return self.goal_index >= len(self.program)

    @property
    def observation(self) -> Observation:
        return self.final_screen if self.done else self.program[self.goal_index].screen

    @property
    def remaining(self) -> tuple[Goal, ...]:
        return self.program[self.goal_index:]


FAMILY_CODES = {name: i for i, name in enumerate(FAMILIES)}


def slot_box(cfg: SimConfig, slot: int) -> tuple[float, float, float, float]:
    rows, cols = cfg.grid
    r, c = divmod(slot, cols)
    w, h = 1.0 / cols, 1.0 / rows
    return (
        round(c * w + cfg.margin * w, 6),
        round(r * h + cfg.margin * h, 6),
        round((c + 1) * w - cfg.margin * w, 6),
        round((r + 1) * h - cfg.margin * h, 6),
    )


def _screen(cfg: SimConfig, items, tag: str) -> Observation:
    """items: iterable of (slot, label, kind)."""
    els = tuple(
        UiElement(f"e{slot}", slot_box(cfg, slot), label, kind) for slot, label, kind in sorted(items)
    )
    w, h = cfg.screen_size
    return Observation(w, h, els, screen_ref=tag)


def _click(label: str, box) -> GuiAction:
    return GuiAction("CLICK", label, _center(box))


def _center(box):
    x, y = box_center(box)
    return (round(x, 6), round(y, 6))


def _pick(rng, pool, n):
    idx = rng.permutation(len(pool))[:n]
    return [pool[i] for i in idx]


def build_program(cfg: SimConfig, index: int) -> SimState:
    """The hidden task program for episode ``index`` (pure in cfg, index)."""
    rng = np.random.default_rng([cfg.rng_seed, FAMILY_CODES[cfg.task_family], index])
    rows, cols = cfg.grid
    n_slots = rows * cols
    lo, hi = cfg.episode_length
    length = int(rng.integers(lo, hi + 1))
    labels = list(cfg.labels)
    fam = cfg.task_family
    goals: list[Goal] = []
    ref = f"{fam}:{index}"

    if fam == "click-sequence":
        n_el = min(n_slots, len(labels))
        names = _pick(rng, labels, n_el)
        slots = [int(s) for s in rng.permutation(n_slots)[:n_el]]
        kinds = [str(k) for k in rng.choice(["button", "link"], size=n_el)]
        items = list(zip(slots, names, kinds))
        targets = items[:length]
        instruction = "click " + " then ".join(t[1] for t in targets)
        for t, (slot, name, _) in enumerate(targets):
            screen = _screen(cfg, items[t:], f"{ref}:{t}")
            box = slot_box(cfg, slot)
            goals.append(Goal(_click(name, box), box, screen))
        final = _screen(cfg, items[length:], f"{ref}:end")

    elif fam == "fill-and-submit":
        n_fields = max(1, length - 1)
        n_el = min(n_slots, len(labels))
        names = _pick(rng, labels, n_el)
        slots = [int(s) for s in rng.permutation(n_slots)[:n_el]]
        values = _pick(rng, list(cfg.fill_words), n_fields)
        fields = [(slots[i], names[i], "field") for i in range(n_fields)]
        others = [(slots[i], names[i], "button") for i in range(n_fields, n_el)]
        instruction = "fill " + " and ".join(f"{f[1]} with {v}" for f, v in zip(fields, values)) + " then submit"
        for t, ((slot, name, _), val) in enumerate(zip(fields, values)):
            screen = _screen(cfg, fields[t:] + others, f"{ref}:{t}")
            box = slot_box(cfg, slot)
            goals.append(Goal(GuiAction("INPUT", val, _center(box)), box, screen))
        goals.append(Goal(GuiAction("ENTER", "", None), None, _screen(cfg, others, f"{ref}:{n_fields}")))
        final = _screen(cfg, [], f"{ref}:end")

    elif fam == "search-then-select":
        query = str(rng.choice(cfg.fill_words))
        n_res = min(n_slots, len(labels))
        results = _pick(rng, labels, n_res)
        target = results[0]
        res_slots = [int(s) for s in rng.permutation(n_slots)[:n_res]]
        pool = [lb for lb in labels if lb != target]
        n_other = min(n_slots - 1, len(pool)) // 2
        slots0 = [int(s) for s in rng.permutation(n_slots)[: n_other + 1]]
        others = list(zip(slots0[1:], _pick(rng, pool, n_other), ["button"] * n_other))
        search = (slots0[0], SEARCH_LABEL, "field")
        instruction = f"search for {query} and open {target}"
        box0 = slot_box(cfg, search[0])
        goals.append(Goal(GuiAction("INPUT", query, _center(box0)), box0, _screen(cfg, [search] + others, f"{ref}:0")))
        goals.append(Goal(GuiAction("ENTER", "", None), None, _screen(cfg, others, f"{ref}:1")))
        res_items = list(zip(res_slots, results, ["link"] * n_res))
        box2 = slot_box(cfg, res_slots[0])
        goals.append(Goal(_click(target, box2), box2, _screen(cfg, res_items, f"{ref}:2")))
        final = _screen(cfg, [], f"{ref}:end")

    else:  # memory-probe
        code = str(rng.choice(labels))
        pool = [lb for lb in labels if lb != code]
        n_dis = min(n_slots - 1, len(pool)) // 2
        # step 0: the code shown once, in a read-only field
        s0 = [int(s) for s in rng.permutation(n_slots)[: n_dis + 1]]
        items0 = [(s0[0], code, "field")] + list(zip(s0[1:], _pick(rng, pool, n_dis), ["button"] * n_dis))
        box = slot_box(cfg, s0[0])
        goals.append(Goal(_click(code, box), box, _screen(cfg, items0, f"{ref}:0")))
        # filler steps: press Next, code never shown
        for t in range(1, length - 1):
            sl = [int(s) for s in rng.permutation(n_slots)[: n_dis + 1]]
            items = [(sl[0], NEXT_LABEL, "button")] + list(zip(sl[1:], _pick(rng, pool, n_dis), ["button"] * n_dis))
            box = slot_box(cfg, sl[0])
            goals.append(Goal(_click(NEXT_LABEL, box), box, _screen(cfg, items, f"{ref}:{t}")))
        # final step: the code among look-alike candidates
        cands = [code] + _pick(rng, pool, cfg.n_candidates - 1)
        sl = [int(s) for s in rng.permutation(n_slots)[: cfg.n_candidates]]
        items = list(zip(sl, cands, ["button"] * cfg.n_candidates))
        box = slot_box(cfg, sl[0])
        goals.append(Goal(_click(code, box), box, _screen(cfg, items, f"{ref}:{length - 1}")))
        instruction = "remember the code , press Next , then select the code"
        final = _screen(cfg, [], f"{ref}:end")

    return SimState(instruction, tuple(goals), final)


def episode_id(cfg: SimConfig, index: int) -> str:
    return f"{cfg.task_family}-s{cfg.rng_seed}-{index:05d}"


def transition(state: SimState, action: GuiAction) -> SimState:
    if state.done:
        raise EpisodeFinished("transition on a finished episode")
    goal = state.program[state.goal_index]
    ok = action.action_type == goal.action.action_type
    if ok and goal.bbox is not None:
        ok = point_in_box(action.position, goal.bbox)
    if ok:
        return dataclasses.replace(state, goal_index=state.goal_index + 1)
    return dataclasses.replace(state, noop_count=state.noop_count + 1)


def oracle_action(state: SimState) -> GuiAction:
    if state.done:
        raise EpisodeFinished("no action on a finished episode")
    return state.program[state.goal_index].action


def generate_dataset(cfg: SimConfig, n_episodes: int, start: int = 0) -> list[Episode]:
    """Oracle rollouts of ``n_episodes`` programs, indices start..start+n-1."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    out = []
    for index in range(start, start + n_episodes):
        state = build_program(cfg, index)
        steps = []
        while not state.done:
            goal = state.program[state.goal_index]
            act = oracle_action(state)
            steps.append(Step(len(steps), state.observation, act, goal.bbox))
            state = transition(state, act)
        meta = (("family", cfg.task_family), ("index", str(index)))
        out.append(Episode(episode_id(cfg, index), state.instruction, tuple(steps), meta))
    return out
