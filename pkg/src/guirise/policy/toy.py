"""Linear-softmax toy policy over a closed vocabulary."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..grammar import parse_turn
from ..trajectory import SIM_ACTIONS, ActionSpace
from . import kernels
from .base import PolicyContext, SampledTurn, UnknownToken
from .features import context_features, pointer_features
from .vocab import Vocab


@dataclass
class SparseGrad:
    """Gradient restricted to the parameter rows it touches."""

    rows: np.ndarray    # (K,) unique row ids
    values: np.ndarray  # (K, V)

    def to_dense(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        out[self.rows] = self.values
        return out

    def dot(self, direction: np.ndarray) -> float:
        return float(np.sum(self.values * direction[self.rows]))


@dataclass(frozen=True)
class ContextFeatures:
    feat: np.ndarray      # hashed context features
    ptr_feat: np.ndarray  # hashed pointer slots
    ptr_tok: np.ndarray   # token each slot points at


@dataclass(frozen=True)
class RowIndex:
    """Parameter rows read at every position of one token sequence."""

    rows: np.ndarray      # (L, F+1)
    ptr_rows: np.ndarray  # (L, P), column 0 only
    ptr_tok: np.ndarray   # (P,)

    def __len__(self) -> int:
        return self.rows.shape[0]


class GradAccumulator:
    """Collects (rows, dlogits) pairs and scatters them once into compact rows."""

    def __init__(self, V: int):
        self.V = V
        self._items: list[tuple[RowIndex, np.ndarray]] = []
        self._sparse: list[tuple[SparseGrad, float]] = []

    def add(self, index: RowIndex, dlogits: np.ndarray) -> None:
        self._items.append((index, dlogits))

    def add_sparse(self, grad: SparseGrad, scale: float = 1.0) -> None:
        self._sparse.append((grad, scale))

    def result(self) -> SparseGrad:
        parts = [a for ix, _ in self._items for a in (ix.rows.ravel(), ix.ptr_rows.ravel())]
        parts += [g.rows for g, _ in self._sparse]
        if not parts:
            return SparseGrad(np.zeros(0, dtype=np.int64), np.zeros((0, self.V)))
        uniq, inv = np.unique(np.concatenate(parts), return_inverse=True)
        values = np.zeros((uniq.size, self.V))
        start = 0
        for ix, dl in self._items:
            n = ix.rows.size
            kernels.scatter_rows(values, inv[start:start + n].reshape(ix.rows.shape), dl)
            start += n
            n = ix.ptr_rows.size
            kernels.scatter_pointers(values, inv[start:start + n].reshape(ix.ptr_rows.shape), dl, ix.ptr_tok)
            start += n
        for g, scale in self._sparse:
            n = g.rows.size
            values[inv[start:start + n]] += scale * g.values
            start += n
        return SparseGrad(uniq, values)


class ToyPolicy:
    """Hashed-feature linear-softmax policy, autoregressive over the vocabulary.

    ``theta`` is a dense (n_buckets, V) matrix; see :mod:`.kernels` for how
    rows (and pointer slots) are selected at each decoding position.
    """

    def __init__(self, vocab: Vocab, n_buckets: int = 1 << 15, theta: Optional[np.ndarray] = None,
                 max_len: int = 64, space: ActionSpace = SIM_ACTIONS, cache_size: int = 4096):
        self.vocab = vocab
        self.tables = kernels.DecodeTables(vocab)
        self.n_buckets = n_buckets
        self.max_len = max_len
        self.space = space
        self.theta = np.zeros((n_buckets, len(vocab))) if theta is None else theta
        if self.theta.shape != (n_buckets, len(vocab)):
            raise ValueError(f"theta shape {self.theta.shape} != {(n_buckets, len(vocab))}")
        self._feat_cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    @property
    def V(self) -> int:
        return len(self.vocab)

    def features(self, ctx: PolicyContext) -> ContextFeatures:
        feat = self._feat_cache.get(ctx)
        if feat is None:
            feat = ContextFeatures(context_features(ctx, self.vocab.n_bins),
                                   *pointer_features(ctx, self.vocab, self.vocab.n_bins))
            self._feat_cache[ctx] = feat
            if len(self._feat_cache) > self._cache_size:
                self._feat_cache.popitem(last=False)
        return feat

    def _check(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise UnknownToken("need a non-empty 1-d token sequence")
        if ids.min() < 0 or ids.max() >= self.V:
            raise UnknownToken("token id outside vocabulary")
        return ids

    def rows(self, ctx: PolicyContext, token_ids) -> RowIndex:
        cf = self.features(ctx)
        rows, prows = kernels.sequence_rows(cf.feat, cf.ptr_feat, self._check(token_ids), self.tables,
                                            self.n_buckets)
        return RowIndex(rows, prows, cf.ptr_tok)

    def log_probs(self, index: RowIndex, theta: Optional[np.ndarray] = None) -> np.ndarray:
        """(L, V) log-distributions at every position."""
        theta = self.theta if theta is None else theta
        return kernels.log_softmax(kernels.gather_logits(theta, index.rows, index.ptr_rows, index.ptr_tok))

    def token_logprobs(self, ctx: PolicyContext, token_ids, theta: Optional[np.ndarray] = None) -> np.ndarray:
        ids = self._check(token_ids)
        logp = self.log_probs(self.rows(ctx, ids), theta)
        return logp[np.arange(ids.size), ids]

    def logprob_and_grad(self, ctx: PolicyContext, token_ids,
                         theta: Optional[np.ndarray] = None) -> tuple[np.ndarray, SparseGrad]:
        """Per-token log-probabilities and the gradient of their sum w.r.t. theta."""
        ids = self._check(token_ids)
        rows = self.rows(ctx, ids)
        logp = self.log_probs(rows, theta)
        idx = np.arange(ids.size)
        dl = -np.exp(logp)
        dl[idx, ids] += 1.0
        acc = GradAccumulator(self.V)
        acc.add(rows, dl)
        return logp[idx, ids], acc.result()

    def decode(self, token_ids: Sequence[int]):
        return parse_turn(self.vocab.detokenize(token_ids), self.space)

    def sample(self, ctx: PolicyContext, n: int = 1, mode: str = "greedy",
               rng: Optional[np.random.Generator] = None, theta: Optional[np.ndarray] = None,
               temperature: float = 1.0) -> list[SampledTurn]:
        if n < 1:
            raise ValueError("n must be >= 1")
        if mode not in ("greedy", "stochastic"):
            raise ValueError(f"unknown mode {mode!r}")
        theta = self.theta if theta is None else theta
        cf = self.features(ctx)
        greedy = mode == "greedy"
        if greedy:
            toks, lps = kernels.sample_sequence(theta, cf.feat, cf.ptr_feat, cf.ptr_tok, self.tables,
                                                np.zeros(self.max_len), True, 1.0, self.n_buckets)
            one = SampledTurn(self.decode(toks), tuple(int(t) for t in toks), tuple(float(x) for x in lps))
            return [one] * n
        rng = rng if rng is not None else np.random.default_rng()
        out = []
        for _ in range(n):
            toks, lps = kernels.sample_sequence(theta, cf.feat, cf.ptr_feat, cf.ptr_tok, self.tables,
                                                rng.random(self.max_len), False, temperature, self.n_buckets)
            out.append(SampledTurn(self.decode(toks), tuple(int(t) for t in toks), tuple(float(x) for x in lps)))
        return out
