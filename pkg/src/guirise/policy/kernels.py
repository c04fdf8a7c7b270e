"""Hot loops of the toy policy: row hashing, logit gather, gradient scatter, decoding.

Parameters are a (n_buckets, V) matrix. At decoding position j the logits
are the sum of the rows selected by hashing (a) one language-model key made
of the segment and the previous two token classes and (b) every context
feature crossed with the segment (and, inside free-text blocks, the previous
token class).

Pointer terms add one shared scalar per (pointer slot, role) to the logit
of the token the slot points at (a matched element's label, its coordinate
bin, a neighbouring word). The scalar lives in column 0 of a hashed row, so
the same weight serves every label that lands in that slot.

Segments: 0 before any tag, 1-4 inside the four blocks, 5 between blocks,
6/7/8 the action-record slots after ``"action":``, ``"value":``,
``"position":``, 9 the x bin, 10 the y bin. Inside the free-text blocks the
role also carries the number of "." tokens seen in the block (capped at 3),
so repeated clause shapes stay distinguishable.

Decoder state is one integer: block in the low 3 bits, clause count above.
"""
from __future__ import annotations

import numpy as np

from .. import _accel
from .._accel import optional_njit

M32 = 0xFFFFFFFF
ROLE_SALT = 0x5BD1E995
LM_FEATURE = 0x27D4EB2F
LM_SALT = 0x165667B1
ROLE_BASE = 4096
TEXT_SEGMENTS = (1, 2, 4)
N_SEGMENTS = 11

_BACKEND = "numba" if _accel.USE_NUMBA else "numpy"


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(name)
    if name == "numba" and not _accel.NUMBA_INSTALLED:
        raise RuntimeError("numba is not installed")
    _BACKEND = name


def get_backend() -> str:
    return _BACKEND


class DecodeTables:
    """Per-vocabulary integer tables consumed by the kernels."""

    def __init__(self, vocab):
        from .vocab import CLOSE_TAGS, OPEN_TAGS

        V = len(vocab)
        self.V = V
        if V + 3 >= ROLE_BASE:
            raise ValueError("vocabulary too large for role hashing")
        xbin, ybin, bos = V, V + 1, V + 2
        tok_class = np.arange(V + 1, dtype=np.int64)
        tok_class[V] = bos  # index -1 maps here
        for i, t in enumerate(vocab.tokens):
            if t.startswith("<x") and t[2:-1].isdigit():
                tok_class[i] = xbin
            elif t.startswith("<y") and t[2:-1].isdigit():
                tok_class[i] = ybin
        open_block = np.zeros(V, dtype=np.int64)
        is_close = np.zeros(V, dtype=np.int64)
        for k, t in enumerate(OPEN_TAGS, 1):
            open_block[vocab.index[t]] = k
        for t in CLOSE_TAGS:
            is_close[vocab.index[t]] = 1
        self.tok_class = tok_class
        self.open_block = open_block
        self.is_close = is_close
        self.spec = np.array([
            vocab.index[":"], vocab.index['"action"'], vocab.index['"value"'], vocab.index['"position"'],
            vocab.index["["], vocab.eos, xbin, vocab.index["."],
        ], dtype=np.int64)
        self.eos = vocab.eos


# ------------------------------------------------------------------ scalar helpers
# Plain integer arithmetic so the same code runs on Python ints, numpy arrays
# and inside numba (all intermediates stay below 2**63).

def _mix_py(x):
    x = (((x >> 16) ^ x) * 0x45D9F3B) & M32
    x = (((x >> 16) ^ x) * 0x45D9F3B) & M32
    return (x >> 16) ^ x


_mix = optional_njit(cache=True)(_mix_py)


def _segment_py(block, p2, p1, tok_class, spec):
    if block == 3:
        if p1 == spec[0]:
            if p2 == spec[1]:
                return 6
            if p2 == spec[2]:
                return 7
            if p2 == spec[3]:
                return 8
        if p1 == spec[4]:
            return 9
        if p1 >= 0 and tok_class[p1] == spec[6]:
            return 10
    return block


_segment = optional_njit(cache=True)(_segment_py)


def _roles_py(seg, dots, c2, c1):
    if seg == 1 or seg == 2 or seg == 4:
        s = seg * 4 + dots
        ctx_role = s * ROLE_BASE + c1 + 1
    else:
        s = seg * 4
        ctx_role = s * ROLE_BASE
    lm_role = (s * ROLE_BASE + c2) * ROLE_BASE + c1
    return ctx_role, lm_role


_roles = optional_njit(cache=True)(_roles_py)


def _advance_py(state, tok, open_block, is_close, dot):
    if open_block[tok] > 0:
        return open_block[tok]
    if is_close[tok] == 1:
        return 5
    dots = state >> 3
    if tok == dot and dots < 3:
        return (state & 7) | ((dots + 1) << 3)
    return state


_advance = optional_njit(cache=True)(_advance_py)


# ------------------------------------------------------------------ numba loops

@optional_njit(cache=True)
def _nb_position_rows(feat, pfeat, block, p2, p1, tok_class, spec, n_buckets, out, pout):
    seg = _segment(block & 7, p2, p1, tok_class, spec)
    ctx_role, lm_role = _roles(seg, block >> 3, tok_class[p2], tok_class[p1])
    out[0] = _mix((LM_FEATURE ^ _mix((lm_role + LM_SALT) & M32)) & M32) % n_buckets
    r = _mix((ctx_role + ROLE_SALT) & M32)
    for f in range(feat.shape[0]):
        out[f + 1] = _mix((feat[f] ^ r) & M32) % n_buckets
    for p in range(pfeat.shape[0]):
        pout[p] = _mix((pfeat[p] ^ r) & M32) % n_buckets


@optional_njit(cache=True)
def _nb_sequence_rows(feat, pfeat, tokens, tok_class, open_block, is_close, spec, n_buckets):
    L = tokens.shape[0]
    rows = np.empty((L, feat.shape[0] + 1), dtype=np.int64)
    prows = np.empty((L, pfeat.shape[0]), dtype=np.int64)
    block, p2, p1 = 0, -1, -1
    for j in range(L):
        _nb_position_rows(feat, pfeat, block, p2, p1, tok_class, spec, n_buckets, rows[j], prows[j])
        block = _advance(block, tokens[j], open_block, is_close, spec[7])
        p2, p1 = p1, tokens[j]
    return rows, prows


@optional_njit(cache=True)
def _nb_gather(theta, rows, prows, ptok):
    L, F = rows.shape
    V = theta.shape[1]
    z = np.zeros((L, V))
    for j in range(L):
        for f in range(F):
            r = rows[j, f]
            for v in range(V):
                z[j, v] += theta[r, v]
        for p in range(ptok.shape[0]):
            z[j, ptok[p]] += theta[prows[j, p], 0]
    return z


@optional_njit(cache=True)
def _nb_scatter(grad, rows_c, dlogits):
    L, F = rows_c.shape
    V = dlogits.shape[1]
    for j in range(L):
        for f in range(F):
            r = rows_c[j, f]
            for v in range(V):
                grad[r, v] += dlogits[j, v]


@optional_njit(cache=True)
def _nb_scatter_ptr(grad, prows_c, dlogits, ptok):
    L, P = prows_c.shape
    for j in range(L):
        for p in range(P):
            grad[prows_c[j, p], 0] += dlogits[j, ptok[p]]


@optional_njit(cache=True)
def _nb_sample(theta, feat, pfeat, ptok, tok_class, open_block, is_close, spec, uniforms, greedy, inv_temp,
               n_buckets):
    max_len = uniforms.shape[0]
    V = theta.shape[1]
    eos = spec[5]
    toks = np.empty(max_len, dtype=np.int64)
    lps = np.empty(max_len)
    rows = np.empty(feat.shape[0] + 1, dtype=np.int64)
    prows = np.empty(pfeat.shape[0], dtype=np.int64)
    z = np.empty(V)
    w = np.empty(V)
    block, p2, p1 = 0, -1, -1
    n = 0
    for j in range(max_len):
        _nb_position_rows(feat, pfeat, block, p2, p1, tok_class, spec, n_buckets, rows, prows)
        for v in range(V):
            z[v] = 0.0
        for f in range(rows.shape[0]):
            r = rows[f]
            for v in range(V):
                z[v] += theta[r, v]
        for p in range(ptok.shape[0]):
            z[ptok[p]] += theta[prows[p], 0]
        zmax = z[0]
        best = 0
        for v in range(1, V):
            if z[v] > zmax:
                zmax = z[v]
                best = v
        s = 0.0
        for v in range(V):
            s += np.exp(z[v] - zmax)
        lse = zmax + np.log(s)
        if greedy:
            tok = best
        else:
            s2 = 0.0
            for v in range(V):
                w[v] = np.exp((z[v] - zmax) * inv_temp)
                s2 += w[v]
            target = uniforms[j] * s2
            acc = 0.0
            tok = V - 1
            for v in range(V):
                acc += w[v]
                if acc > target:
                    tok = v
                    break
        toks[j] = tok
        lps[j] = z[tok] - lse
        n = j + 1
        if tok == eos:
            break
        block = _advance(block, tok, open_block, is_close, spec[7])
        p2, p1 = p1, tok
    return toks[:n].copy(), lps[:n].copy()


# ------------------------------------------------------------------ numpy path

def _np_position_rows(feat, pfeat, block, p2, p1, tables, n_buckets):
    seg = _segment_py(block & 7, p2, p1, tables.tok_class, tables.spec)
    ctx_role, lm_role = _roles_py(seg, block >> 3, int(tables.tok_class[p2]), int(tables.tok_class[p1]))
    out = np.empty(feat.shape[0] + 1, dtype=np.int64)
    out[0] = _mix_py((LM_FEATURE ^ _mix_py((lm_role + LM_SALT) & M32)) & M32) % n_buckets
    r = _mix_py((ctx_role + ROLE_SALT) & M32)
    out[1:] = _mix_py((feat ^ r) & M32) % n_buckets
    return out, _mix_py((pfeat ^ r) & M32) % n_buckets


def _np_sequence_rows(feat, pfeat, tokens, tables, n_buckets):
    rows = np.empty((len(tokens), feat.shape[0] + 1), dtype=np.int64)
    prows = np.empty((len(tokens), pfeat.shape[0]), dtype=np.int64)
    block, p2, p1 = 0, -1, -1
    for j, tok in enumerate(tokens):
        rows[j], prows[j] = _np_position_rows(feat, pfeat, block, p2, p1, tables, n_buckets)
        tok = int(tok)
        block = _advance_py(block, tok, tables.open_block, tables.is_close, int(tables.spec[7]))
        p2, p1 = p1, tok
    return rows, prows


def _np_gather(theta, rows, prows, ptok):
    z = theta[rows].sum(axis=1)
    if ptok.size:
        # several slots may point at the same token, hence add.at
        np.add.at(z, (np.arange(rows.shape[0])[:, None], ptok[None, :]), theta[prows, 0])
    return z


def _np_sample(theta, feat, pfeat, ptok, tables, uniforms, greedy, inv_temp, n_buckets):
    toks, lps = [], []
    block, p2, p1 = 0, -1, -1
    for j in range(uniforms.shape[0]):
        rows, prows = _np_position_rows(feat, pfeat, block, p2, p1, tables, n_buckets)
        z = theta[rows].sum(axis=0)
        np.add.at(z, ptok, theta[prows, 0])
        zmax = z.max()
        lse = zmax + np.log(np.exp(z - zmax).sum())
        if greedy:
            tok = int(np.argmax(z))
        else:
            w = np.exp((z - zmax) * inv_temp)
            idx = np.nonzero(np.cumsum(w) > uniforms[j] * w.sum())[0]
            tok = int(idx[0]) if idx.size else len(z) - 1
        toks.append(tok)
        lps.append(z[tok] - lse)
        if tok == tables.eos:
            break
        block = _advance_py(block, tok, tables.open_block, tables.is_close, int(tables.spec[7]))
        p2, p1 = p1, tok
    return np.array(toks, dtype=np.int64), np.array(lps)


# ------------------------------------------------------------------ dispatch

def sequence_rows(feat, pfeat, tokens, tables, n_buckets):
    """(L, F+1) feature rows and (L, P) pointer rows along a token sequence."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if _BACKEND == "numba":
        return _nb_sequence_rows(feat, pfeat, tokens, tables.tok_class, tables.open_block, tables.is_close,
                                 tables.spec, n_buckets)
    return _np_sequence_rows(feat, pfeat, tokens, tables, n_buckets)


def gather_logits(theta, rows, prows, ptok):
    if _BACKEND == "numba":
        return _nb_gather(theta, rows, prows, ptok)
    return _np_gather(theta, rows, prows, ptok)


def scatter_rows(grad, rows_c, dlogits):
    """grad[rows_c[j, f]] += dlogits[j] for every j, f (in place)."""
    if _BACKEND == "numba":
        _nb_scatter(grad, rows_c, dlogits)
    else:
        F = rows_c.shape[1]
        np.add.at(grad, rows_c.ravel(), np.repeat(dlogits, F, axis=0))


def scatter_pointers(grad, prows_c, dlogits, ptok):
    """grad[prows_c[j, p], 0] += dlogits[j, ptok[p]] (in place)."""
    if _BACKEND == "numba":
        _nb_scatter_ptr(grad, prows_c, dlogits, ptok)
    elif ptok.size:
        np.add.at(grad[:, 0], prows_c.ravel(), dlogits[:, ptok].ravel())


def sample_sequence(theta, feat, pfeat, ptok, tables, uniforms, greedy, temperature, n_buckets):
    inv_temp = 1.0 / temperature
    if _BACKEND == "numba":
        return _nb_sample(theta, feat, pfeat, ptok, tables.tok_class, tables.open_block, tables.is_close,
                          tables.spec, uniforms, greedy, inv_temp, n_buckets)
    return _np_sample(theta, feat, pfeat, ptok, tables, uniforms, greedy, inv_temp, n_buckets)


def log_softmax(z):
    zmax = z.max(axis=-1, keepdims=True)
    return z - (zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)))
