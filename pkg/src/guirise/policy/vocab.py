"""Closed word-level vocabulary for the toy policy.

Tag strings, quoted action keys/types/values and coordinate bins are single
tokens; everything else splits on whitespace and punctuation. A coordinate
pair ``[x, y]`` becomes ``[ <xI> <yJ> ]`` with I, J the bin indices.
"""
from __future__ import annotations

import re
from typing import Iterable, Sequence

from ..grammar import TAGS, format_coord

EOS = "<eos>"
UNK = "<unk>"
PUNCT = ("{", "}", "[", "]", ":", ",", ".", '"', "'")
KEYS = ('"action"', '"value"', '"position"')
# Words the mock labeler's templates use.
TEMPLATE_WORDS = (
    "starting", "the", "task", "steps", "done", "click", "type", "press", "enter",
    "clicked", "typed", "pressed", "code", "null",
)
DIGITS = tuple(str(i) for i in range(10))

OPEN_TAGS = tuple(f"<{t}>" for t in TAGS)
CLOSE_TAGS = tuple(f"</{t}>" for t in TAGS)

_NUM = r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"
_TOKEN_RE = re.compile(
    r"(?P<tag></?(?:" + "|".join(re.escape(t) for t in TAGS) + r")>)"
    r"|(?P<pair>\[\s*(?P<x>" + _NUM + r")\s*,\s*(?P<y>" + _NUM + r")\s*\])"
    r'|(?P<quoted>"[^"\n]*")'
    r"|(?P<word>\w+)"
    r"|(?P<punct>[^\w\s])"
)


def _dedupe(items: Iterable[str]) -> list[str]:
    seen, out = set(), []
    for it in items:
        if it not in seen:
            seen.add(it)
            out.append(it)
    return out


class Vocab:
    """Token <-> id maps plus the tables the decoding kernels need."""

    def __init__(self, action_types: Sequence[str], values: Sequence[str],
                 extra_words: Sequence[str] = (), n_bins: int = 20):
        self.n_bins = n_bins
        quoted_types = [f'"{t}"' for t in action_types]
        quoted_values = [f'"{v}"' for v in values]
        bare = [w for v in values for w in re.findall(r"\w+", v)]
        tokens = (
            [EOS, UNK] + list(OPEN_TAGS) + list(CLOSE_TAGS) + list(PUNCT) + list(KEYS)
            + quoted_types + quoted_values + bare + list(TEMPLATE_WORDS) + list(extra_words) + list(DIGITS)
            + [f"<x{i}>" for i in range(n_bins)] + [f"<y{i}>" for i in range(n_bins)]
        )
        self.tokens = _dedupe(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.eos = self.index[EOS]
        self.unk = self.index[UNK]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, self.unk)

    def coord_bin(self, v: float) -> int:
        return min(int(v * self.n_bins), self.n_bins - 1)

    def bin_center(self, b: int) -> float:
        return (b + 0.5) / self.n_bins

    def tokenize(self, text: str) -> list[int]:
        out: list[int] = []
        for m in _TOKEN_RE.finditer(text):
            tok = m.group(0)
            if m.group("pair") is not None:
                x, y = float(m.group("x")), float(m.group("y"))
                if 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0:
                    out += [self.index["["], self.index[f"<x{self.coord_bin(x)}>"],
                            self.index[f"<y{self.coord_bin(y)}>"], self.index["]"]]
                else:
                    out += [self.index["["]] + self.tokenize(tok[1:-1]) + [self.index["]"]]
            elif m.group("quoted") is not None:
                if tok in self.index:
                    out.append(self.index[tok])
                else:
                    out.append(self.index['"'])
                    out += self.tokenize(tok[1:-1])
                    out.append(self.index['"'])
            else:
                out.append(self.id(tok))
        return out

    def detokenize(self, ids: Sequence[int]) -> str:
        parts: list[str] = []
        toks = [self.tokens[i] for i in ids]
        i = 0
        while i < len(toks):
            t = toks[i]
            if t == EOS:
                break
            if (t == "[" and i + 3 < len(toks) and toks[i + 1].startswith("<x") and toks[i + 2].startswith("<y")
                    and toks[i + 3] == "]"):
                x = self.bin_center(int(toks[i + 1][2:-1]))
                y = self.bin_center(int(toks[i + 2][2:-1]))
                parts.append(f"[{format_coord(x)}, {format_coord(y)}]")
                i += 4
                continue
            if t.startswith("<x") and t[2:-1].isdigit():
                t = format_coord(self.bin_center(int(t[2:-1])))
            elif t.startswith("<y") and t[2:-1].isdigit():
                t = format_coord(self.bin_center(int(t[2:-1])))
            parts.append(t)
            i += 1
        return " ".join(parts)


def sim_vocab(sim_cfg) -> Vocab:
    return Vocab(sim_cfg.action_space.types, sim_cfg.value_vocab, n_bins=20)
