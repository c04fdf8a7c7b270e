"""Four-tag turn format and the key-value action record.

Wire format (one turn)::

    <Progress Estimation>...</Progress Estimation>
    <Decision Reasoning>...</Decision Reasoning>
    <Action>{"action": "CLICK", "value": "Apply", "position": [0.3, 0.66]}</Action>
    <Memory Summary>...</Memory Summary>

Whitespace inside tag markup and between blocks is ignored by the tag
check; block contents are kept verbatim.
"""
from __future__ import annotations

import ast
import json
import math
import re
import warnings
from typing import Optional, Sequence

from .trajectory import DEFAULT_ACTION_SPACE, ActionSpace, AgentTurn, GuiAction

TAGS = ("Progress Estimation", "Decision Reasoning", "Action", "Memory Summary")
ACTION_KEYS = ("action", "value", "position")


class ActionParseError(ValueError):
    """Base class for action-record parse failures."""


class MalformedRecord(ActionParseError):
    pass


class MissingKey(ActionParseError):
    pass


class ExtraKey(ActionParseError):
    pass


class UnknownActionType(ActionParseError):
    pass


class BadCoordinate(ActionParseError):
    pass


class InvalidAction(ValueError):
    pass


def _tag_pattern(names: Sequence[str]) -> re.Pattern:
    alts = "|".join(r"\s+".join(map(re.escape, n.split())) for n in names)
    return re.compile(r"<\s*(/?)\s*(" + alts + r")\s*>")


_TURN_TAG_RE = _tag_pattern(TAGS)


def _canonical(name: str) -> str:
    return " ".join(name.split())


def find_tags(text: str, pattern: re.Pattern = _TURN_TAG_RE):
    """All tag occurrences as (is_close, name, start, end)."""
    return [(m.group(1) == "/", _canonical(m.group(2)), m.start(), m.end()) for m in pattern.finditer(text)]


def check_tags(text: str) -> bool:
    """True iff the text is exactly the four tag blocks, in order, once each."""
    found = find_tags(text)
    expected = [(close, name) for name in TAGS for close in (False, True)]
    if [(c, n) for c, n, _, _ in found] != expected:
        return False
    # Only whitespace may sit outside the blocks.
    gaps = [text[: found[0][2]], text[found[-1][3]:]]
    gaps += [text[found[i][3]: found[i + 1][2]] for i in range(1, len(found) - 1, 2)]
    return all(not g.strip() for g in gaps)


def extract_blocks(text: str, names: Sequence[str] = TAGS, pattern: Optional[re.Pattern] = None) -> dict:
    """Best-effort scan: inner text of the first open..close pair per name, else None."""
    pattern = pattern or (_TURN_TAG_RE if tuple(names) == TAGS else _tag_pattern(names))
    found = find_tags(text, pattern)
    out = {}
    for name in names:
        inner = None
        for i, (close, n, _, end) in enumerate(found):
            if n == name and not close:
                for close2, n2, start2, _ in found[i + 1:]:
                    if n2 == name and close2:
                        inner = text[end:start2]
                        break
                break
        out[name] = inner
    return out


def _load_record(text: str):
    s = text.strip()
    try:
        return json.loads(s)
    except (ValueError, RecursionError):
        pass
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # escape-sequence noise from arbitrary model text
            return ast.literal_eval(s)
    except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
        raise MalformedRecord(f"not a key-value record: {s[:60]!r}") from None


def _record_keys_error(rec) -> Optional[ActionParseError]:
    if not isinstance(rec, dict):
        return MalformedRecord(f"expected a record, got {type(rec).__name__}")
    keys = set(rec)
    missing = [k for k in ACTION_KEYS if k not in keys]
    if missing:
        return MissingKey(f"missing key(s): {missing}")
    extra = sorted(map(str, keys - set(ACTION_KEYS)))
    if extra:
        return ExtraKey(f"unexpected key(s): {extra}")
    return None


def check_action_format(action_text: str) -> bool:
    """CheckActionF: a record with exactly the keys action, value, position."""
    try:
        rec = _load_record(action_text)
    except MalformedRecord:
        return False
    return _record_keys_error(rec) is None


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_action(action_text: str, space: ActionSpace = DEFAULT_ACTION_SPACE) -> GuiAction:
    """Parse an action record into a :class:`GuiAction`.

    Rules are checked in order and the first violation is raised: record
    shape, missing keys, extra keys, action type, value type, coordinates.
    """
    rec = _load_record(action_text)
    err = _record_keys_error(rec)
    if err is not None:
        raise err
    atype = rec["action"]
    if not isinstance(atype, str) or atype not in space:
        raise UnknownActionType(f"unknown action type {atype!r}")
    value = rec["value"]
    if not isinstance(value, str):
        raise MalformedRecord(f"value must be text, got {type(value).__name__}")
    pos = rec["position"]
    if space.is_spatial(atype):
        if not isinstance(pos, (list, tuple)) or len(pos) != 2 or not all(_is_real(v) for v in pos):
            raise BadCoordinate(f"{atype} needs position [x, y], got {pos!r}")
        if not all(0.0 <= v <= 1.0 for v in pos):
            raise BadCoordinate(f"position {pos!r} outside [0,1]")
        return GuiAction(atype, value, (float(pos[0]), float(pos[1])))
    if pos is not None:
        raise BadCoordinate(f"{atype} takes no position, got {pos!r}")
    return GuiAction(atype, value, None)


def format_coord(v: float) -> str:
    s = f"{v:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("", "-0") else s


def serialize_action(action: GuiAction) -> str:
    pos = "null" if action.position is None else "[" + ", ".join(format_coord(v) for v in action.position) + "]"
    return (
        '{"action": ' + json.dumps(action.action_type, ensure_ascii=False)
        + ', "value": ' + json.dumps(action.value, ensure_ascii=False)
        + ', "position": ' + pos + "}"
    )


def serialize_turn(cot: tuple[str, str], action: GuiAction, summary: str,
                   space: ActionSpace = DEFAULT_ACTION_SPACE) -> str:
    progress, decision = cot
    problems = action.violations(space)
    if problems:
        raise InvalidAction("; ".join(problems))
    for text in (progress, decision, summary):
        if find_tags(text):
            raise ValueError("block text must not contain tag markup")
    return (
        f"<Progress Estimation>{progress}</Progress Estimation>\n"
        f"<Decision Reasoning>{decision}</Decision Reasoning>\n"
        f"<Action>{serialize_action(action)}</Action>\n"
        f"<Memory Summary>{summary}</Memory Summary>"
    )


def parse_turn(raw_text: str, space: ActionSpace = DEFAULT_ACTION_SPACE) -> AgentTurn:
    tags_ok = check_tags(raw_text)
    blocks = extract_blocks(raw_text)
    action_text = blocks["Action"] or ""
    parsed = None
    if blocks["Action"] is not None:
        try:
            parsed = parse_action(action_text, space)
        except ActionParseError:
            parsed = None
    return AgentTurn(
        raw_text=raw_text,
        progress_estimation=blocks["Progress Estimation"] or "",
        decision_reasoning=blocks["Decision Reasoning"] or "",
        action_text=action_text,
        parsed_action=parsed,
        history_summary=blocks["Memory Summary"] or "",
        tags_ok=tags_ok,
    )
