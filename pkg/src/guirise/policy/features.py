"""Hashed context features and pointer slots for the toy policy.

Context features: a bias, history unigrams, and for each element whose
label occurs in the instruction or the history a rank feature ("first
mentioned element on screen", "second", ...) with its location, label, kind
and neighbouring words; fields get reading-order rank features too.
Element-wide bags (every label on screen, every instruction word) are left
out on purpose: with a few dozen training episodes they only let the model
memorize episodes.

Pointer slots name the same ranked items abstractly so one weight can
point at whichever concrete token fills the slot.
"""
from __future__ import annotations

import re
import zlib

import numpy as np

_WORD_RE = re.compile(r"\w+")


def words(text: str) -> list[str]:
    return [w.lower() for w in _WORD_RE.findall(text)]


def _bin(v: float, n_bins: int) -> int:
    return min(max(int(v * n_bins), 0), n_bins - 1)


def _fields(obs):
    return [el for *_, el in sorted((el.bbox[1], el.bbox[0], el.element_id, el)
                                     for el in obs.elements if el.kind == "field")]


def feature_strings(ctx, n_bins: int = 20, max_rank: int = 3, n_fields: int = 2) -> list[str]:
    u = words(ctx.instruction)
    h = words(ctx.history)
    feats = {"bias"}
    feats.update(f"h:{w}" for w in h)
    if not h:
        feats.add("h:none")
    for src, seq in (("u", u), ("h", h)):
        first: dict[str, int] = {}
        for pos, w in enumerate(seq):
            first.setdefault(w, pos)
        matched = sorted((first[el.label.lower()], el.element_id, el) for el in ctx.observation.elements
                         if el.label.lower() in first)
        if not matched:
            feats.add(f"m{src}:none")
        for rank, (pos, _, el) in enumerate(matched[:max_rank], 1):
            p = f"m{src}{rank}"
            x1, y1, x2, y2 = el.bbox
            # label identity is left to the pointer slots
            feats.update((f"{p}@x{_bin((x1 + x2) / 2, n_bins)}", f"{p}@y{_bin((y1 + y2) / 2, n_bins)}",
                          f"{p}:{el.kind}"))
            for off in (-1, 1):
                if 0 <= pos + off < len(seq):
                    feats.add(f"{p}{off:+d}:{seq[pos + off]}")
    fields = _fields(ctx.observation)
    if not fields:
        feats.add("f:none")
    for rank, el in enumerate(fields[:n_fields], 1):
        x1, y1, x2, y2 = el.bbox
        feats.update((f"f{rank}", f"f{rank}@x{_bin((x1 + x2) / 2, n_bins)}", f"f{rank}@y{_bin((y1 + y2) / 2, n_bins)}"))
    return sorted(feats)


def hash_features(names) -> np.ndarray:
    return np.array(sorted({zlib.crc32(n.encode("utf-8")) for n in names}), dtype=np.int64)


def context_features(ctx, n_bins: int = 20) -> np.ndarray:
    return hash_features(feature_strings(ctx, n_bins))


# ---------------------------------------------------------------- pointer slots

_CASED_RE = re.compile(r"\w+")


def pointer_slots(ctx, n_bins: int = 20, max_rank: int = 3, n_fields: int = 2, n_hist: int = 3) -> list[tuple[str, str]]:
    """(slot name, target token) pairs: which concrete token each abstract slot stands for.

    Every word target is offered twice, bare and quoted (":q" slots), since
    free text and the action record spell values differently.
    """
    u = _CASED_RE.findall(ctx.instruction)
    h = _CASED_RE.findall(ctx.history)
    out: list[tuple[str, str]] = []

    def word(name, w):
        out.append((name, w))
        out.append((name + ":q", f'"{w}"'))

    def place(name, el):
        x1, y1, x2, y2 = el.bbox
        out.append((name + ":x", f"<x{_bin((x1 + x2) / 2, n_bins)}>"))
        out.append((name + ":y", f"<y{_bin((y1 + y2) / 2, n_bins)}>"))

    for src, seq in (("u", u), ("h", h)):
        first: dict[str, int] = {}
        for pos, w in enumerate(seq):
            first.setdefault(w.lower(), pos)
        matched = sorted((first[el.label.lower()], el.element_id, el) for el in ctx.observation.elements
                         if el.label.lower() in first)
        for rank, (pos, _, el) in enumerate(matched[:max_rank], 1):
            p = f"m{src}{rank}"
            word(p, el.label)
            place(p, el)
            for off in (-1, 1, 2):
                if 0 <= pos + off < len(seq):
                    word(f"{p}{off:+d}", seq[pos + off])
    for rank, el in enumerate(_fields(ctx.observation)[:n_fields], 1):
        word(f"f{rank}", el.label)
        place(f"f{rank}", el)
    for i, w in enumerate(h[:n_hist]):
        word(f"h@{i}", w)
    for i, w in enumerate(reversed(h[-n_hist:]), 1):
        word(f"h@-{i}", w)
    return out


def pointer_features(ctx, vocab, n_bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Hashed slot ids and target token ids, for slots whose target is in the vocabulary."""
    pairs = sorted({(zlib.crc32(("p:" + name).encode("utf-8")), vocab.index[tok])
                    for name, tok in pointer_slots(ctx, n_bins) if tok in vocab.index})
    if not pairs:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    arr = np.array(pairs, dtype=np.int64)
    return arr[:, 0].copy(), arr[:, 1].copy()
