import pytest
from hypothesis import given, strategies as st

from guirise.grammar import (
    BadCoordinate, ExtraKey, InvalidAction, MalformedRecord, MissingKey, UnknownActionType, ActionParseError,
    check_action_format, check_tags, extract_blocks, format_coord, parse_action, parse_turn, serialize_action,
    serialize_turn,
)
from guirise.trajectory import GUIACT, SIM_ACTIONS, AITW, GuiAction

from oracles import action_strings, parse_oracle

FULL = ("<Progress Estimation>p</Progress Estimation><Decision Reasoning>d</Decision Reasoning>"
        "<Action>a</Action><Memory Summary>m</Memory Summary>")


def test_four_tags_in_order():
    assert check_tags(FULL)


def test_missing_block():
    assert not check_tags(FULL.replace("<Memory Summary>m</Memory Summary>", ""))


def test_action_before_reasoning():
    swapped = ("<Progress Estimation>p</Progress Estimation><Action>a</Action>"
               "<Decision Reasoning>d</Decision Reasoning><Memory Summary>m</Memory Summary>")
    assert not check_tags(swapped)


@pytest.mark.parametrize("text", [
    FULL.replace("<Action>a</Action>", "<Action>a</Action><Action>b</Action>"),
    FULL.replace("</Action>", ""),
    FULL.replace("<Action>a</Action>", "</Action>a<Action>"),
    "junk " + FULL,
    FULL + " trailing",
    FULL.replace("</Decision Reasoning>", "</Decision Reasoning> between "),
    "",
    "free text without any tags",
])
def test_structural_violations(text):
    assert not check_tags(text)


def test_whitespace_is_insignificant():
    spaced = "\n " + FULL.replace("><", ">\n  <").replace("<Memory Summary>", "< Memory  Summary >") + "\n"
    assert check_tags(spaced)


def test_empty_blocks_are_format_valid():
    assert check_tags("<Progress Estimation></Progress Estimation><Decision Reasoning></Decision Reasoning>"
                      "<Action></Action><Memory Summary></Memory Summary>")


def test_example_action_record():
    a = parse_action('{"action": "CLICK", "value": "Apply", "position": [0.3, 0.66]}')
    assert a == GuiAction("CLICK", "Apply", (0.3, 0.66))


def test_python_literal_record_accepted():
    assert parse_action("{'action': 'ENTER', 'value': '', 'position': None}") == GuiAction("ENTER", "", None)


@pytest.mark.parametrize("text, exc", [
    ('{"action": "CLICK", "value": "Apply", "position": [0.3, 0.66], "note": "x"}', ExtraKey),
    ('{"action": "FLY", "value": "x", "position": [0.1, 0.1]}', UnknownActionType),
    ('{"action": "CLICK", "value": "x"}', MissingKey),
    ('{"action": "CLICK", "value": "x", "position": [1.2, 0.1]}', BadCoordinate),
    ('{"action": "CLICK", "value": "x", "position": null}', BadCoordinate),
    ('{"action": "ENTER", "value": "", "position": [0.5, 0.5]}', BadCoordinate),
    ('{"action": "CLICK", "value": 5, "position": [0.5, 0.5]}', MalformedRecord),
    ('{"action": "CLICK", "value": "x", "position": [true, 0.5]}', BadCoordinate),
    ("CLICK Apply", MalformedRecord),
    ("[1, 2]", MalformedRecord),
    # missing and extra at once: the missing key is reported first
    ('{"action": "CLICK", "value": "x", "note": 1}', MissingKey),
])
def test_structured_failures(text, exc):
    with pytest.raises(exc):
        parse_action(text)
    assert issubclass(exc, ActionParseError)


def test_failure_classes_are_distinct():
    classes = {MalformedRecord, MissingKey, ExtraKey, UnknownActionType, BadCoordinate}
    for a in classes:
        for b in classes - {a}:
            assert not issubclass(a, b)


def test_parse_agrees_with_rule_oracle_on_corpus():
    corpus = action_strings(12_000, seed=1)
    for space in (GUIACT, SIM_ACTIONS, AITW):
        mismatches = []
        for text in corpus:
            expected = parse_oracle(text, space.types, space.spatial)
            try:
                a = parse_action(text, space)
                got = ("ok", a.action_type, a.value, a.position)
            except ActionParseError as e:
                got = type(e).__name__
            if got != expected:
                mismatches.append((text, expected, got))
            assert check_action_format(text) == _keys_exact(text)
        assert mismatches == []


def _keys_exact(text):
    from oracles import load_record
    ok, rec = load_record(text)
    return ok and isinstance(rec, dict) and set(rec) == {"action", "value", "position"}


def test_parse_turn_valid():
    text = serialize_turn(("p", "d"), GuiAction("CLICK", "Apply", (0.3, 0.66)), "m")
    t = parse_turn(text)
    assert t.tags_ok and t.parsed_action == GuiAction("CLICK", "Apply", (0.3, 0.66))
    assert (t.progress_estimation, t.decision_reasoning, t.history_summary) == ("p", "d", "m")


def test_parse_turn_malformed_action_keeps_tags():
    bad_actions = ["{", '{"action": "FLY", "value": "", "position": null}', "", "click it",
                   '{"action": "CLICK", "value": "x", "position": [2, 2]}']
    for a in bad_actions:
        t = parse_turn(f"<Progress Estimation>p</Progress Estimation><Decision Reasoning>d</Decision Reasoning>"
                       f"<Action>{a}</Action><Memory Summary>m</Memory Summary>")
        assert t.tags_ok and t.parsed_action is None and t.action_text == a and t.history_summary == "m"


def test_parse_turn_untagged():
    t = parse_turn("I would click the button")
    assert not t.tags_ok and t.parsed_action is None
    assert t.progress_estimation == t.decision_reasoning == t.history_summary == t.action_text == ""


def test_parse_turn_best_effort_on_broken_layout():
    t = parse_turn('<Action>{"action": "ENTER", "value": "", "position": null}</Action><Memory Summary>m')
    assert not t.tags_ok
    assert t.parsed_action == GuiAction("ENTER", "", None)
    assert t.history_summary == ""


def test_serialize_example_and_null_position():
    s = serialize_action(GuiAction("CLICK", "Apply", (0.3, 0.66)))
    assert s == '{"action": "CLICK", "value": "Apply", "position": [0.3, 0.66]}'
    assert serialize_action(GuiAction("ENTER", "", None)).endswith('"position": null}')


def test_serialize_rejects_invalid_action():
    with pytest.raises(InvalidAction):
        serialize_turn(("p", "d"), GuiAction("CLICK", "x", None), "m")
    with pytest.raises(InvalidAction):
        serialize_turn(("p", "d"), GuiAction("ENTER", "", (0.5, 0.5)), "m")
    with pytest.raises(ValueError):
        serialize_turn(("<Action>", "d"), GuiAction("ENTER"), "m")


def test_coordinate_formatting():
    assert format_coord(0.30000001) == "0.3"
    assert format_coord(1.0) == "1"
    assert format_coord(0.0) == "0"
    assert format_coord(0.12345) in ("0.1234", "0.1235")


_text = st.text(alphabet=st.characters(blacklist_characters="<>", blacklist_categories=("Cs",)), max_size=30)
_coord = st.integers(0, 10_000).map(lambda i: i / 10_000)


@st.composite
def actions(draw, space=GUIACT):
    t = draw(st.sampled_from(space.types))
    pos = (draw(_coord), draw(_coord)) if space.is_spatial(t) else None
    return GuiAction(t, draw(_text), pos)


@given(_text, _text, actions(), _text)
def test_round_trip_law(progress, decision, action, summary):
    t = parse_turn(serialize_turn((progress, decision), action, summary))
    assert t.tags_ok
    assert (t.progress_estimation, t.decision_reasoning, t.history_summary) == (progress, decision, summary)
    assert t.parsed_action == action


def test_round_trip_ten_thousand_fuzzed_turns():
    import numpy as np
    rng = np.random.default_rng(7)
    alphabet = list("abcdefghij XYZ.,'\"{}[]:0123456789éü\n\t&")
    failures = 0
    for _ in range(10_000):
        words = ["".join(rng.choice(alphabet, size=rng.integers(0, 12))) for _ in range(3)]
        t = GUIACT.types[rng.integers(len(GUIACT.types))]
        pos = (float(rng.integers(0, 10_001)) / 10_000, float(rng.integers(0, 10_001)) / 10_000) \
            if GUIACT.is_spatial(t) else None
        a = GuiAction(t, words[2][::-1], pos)
        back = parse_turn(serialize_turn((words[0], words[1]), a, words[2]))
        failures += not (back.tags_ok and back.parsed_action == a and back.progress_estimation == words[0]
                         and back.decision_reasoning == words[1] and back.history_summary == words[2])
    assert failures == 0


def test_extract_blocks_first_pair():
    b = extract_blocks("<Action>1</Action><Action>2</Action>")
    assert b["Action"] == "1" and b["Memory Summary"] is None
