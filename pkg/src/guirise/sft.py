"""Cold-start supervised stage: pseudo-labels -> target sequences -> cross-entropy."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .grammar import serialize_turn
from .policy.base import PolicyContext
from .policy.toy import GradAccumulator, SparseGrad, ToyPolicy
from .trajectory import Episode, GuiAction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PseudoLabel:
    episode_id: str
    t: int
    progress: str
    decision: str
    summary: str
    gt_action: GuiAction


@dataclass(frozen=True)
class SftExample:
    ctx: PolicyContext
    target: tuple[int, ...]


def build_target(label: PseudoLabel, policy: ToyPolicy) -> tuple[int, ...]:
    text = serialize_turn((label.progress, label.decision), label.gt_action, label.summary, policy.space)
    return tuple(policy.vocab.tokenize(text)) + (policy.vocab.eos,)


def ce_loss(policy: ToyPolicy, ctx: PolicyContext, target: Sequence[int],
            theta: Optional[np.ndarray] = None) -> tuple[float, SparseGrad]:
    """Summed token cross-entropy under teacher forcing and its gradient."""
    lp, grad = policy.logprob_and_grad(ctx, target, theta)
    grad.values *= -1.0
    return float(-lp.sum()), grad


def build_examples(episodes: Sequence[Episode], labels: dict[str, Sequence[PseudoLabel]],
                   policy: ToyPolicy) -> list[SftExample]:
    """One example per step; step t's context carries the label summary of step t-1."""
    out = []
    for ep in episodes:
        eplabels = list(labels[ep.episode_id])
        if [lb.t for lb in eplabels] != list(range(len(ep.steps))):
            raise ValueError(f"{ep.episode_id}: labels must cover steps 0..{len(ep.steps) - 1} in order")
        prev = ""
        for step, lb in zip(ep.steps, eplabels):
            if lb.gt_action != step.gt_action:
                raise ValueError(f"{ep.episode_id} step {step.index}: label action differs from ground truth")
            out.append(SftExample(PolicyContext(ep.instruction, step.observation, prev), build_target(lb, policy)))
            prev = lb.summary
    return out


def train_sft(policy: ToyPolicy, examples: Sequence[SftExample], steps: int = 500, lr: float = 0.5,
              batch_size: int = 8, rng: Optional[np.random.Generator] = None,
              optimizer: str = "adagrad") -> list[float]:
    """Minibatch descent on the summed token cross-entropy (mean over the minibatch).

    ``optimizer`` is "adagrad" or "sgd". Updates ``policy.theta`` in place
    and returns the per-step mean loss.
    """
    if optimizer not in ("adagrad", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    accum = np.zeros_like(policy.theta) if optimizer == "adagrad" else None
    order = np.array([], dtype=np.int64)
    history = []
    for step in range(steps):
        if order.size < batch_size:
            order = np.concatenate([order, rng.permutation(len(examples))])
        batch, order = order[:batch_size], order[batch_size:]
        acc = GradAccumulator(policy.V)
        total = 0.0
        for i in batch:
            ex = examples[int(i)]
            index = policy.rows(ex.ctx, ex.target)
            logp = policy.log_probs(index)
            ids = np.asarray(ex.target)
            idx = np.arange(ids.size)
            total -= logp[idx, ids].sum()
            dl = np.exp(logp)
            dl[idx, ids] -= 1.0
            acc.add(index, dl / len(batch))
        g = acc.result()
        if accum is None:
            policy.theta[g.rows] -= lr * g.values
        else:
            accum[g.rows] += g.values ** 2
            policy.theta[g.rows] -= lr * g.values / (np.sqrt(accum[g.rows]) + 1e-8)
        history.append(total / len(batch))
        if step % 100 == 0:
            log.debug("sft step %d loss %.4f", step, history[-1])
    return history


# ---------------------------------------------------------------- pseudo-label files

def label_to_record(lb: PseudoLabel) -> dict:
    a = lb.gt_action
    return {
        "episode_id": lb.episode_id,
        "t": lb.t,
        "progress": lb.progress,
        "decision": lb.decision,
        "summary": lb.summary,
        "gt_action": {"action_type": a.action_type, "value": a.value,
                      "position": None if a.position is None else list(a.position)},
    }


def label_from_record(rec: dict) -> PseudoLabel:
    a = rec["gt_action"]
    act = GuiAction(a["action_type"], a["value"], None if a["position"] is None else tuple(a["position"]))
    return PseudoLabel(rec["episode_id"], rec["t"], rec["progress"], rec["decision"], rec["summary"], act)


def write_labels(path, labels: Sequence[PseudoLabel]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for lb in labels:
            fh.write(json.dumps(label_to_record(lb), ensure_ascii=False, separators=(",", ":")) + "\n")


def read_labels(path) -> dict[str, list[PseudoLabel]]:
    out: dict[str, list[PseudoLabel]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                lb = label_from_record(json.loads(line))
                out.setdefault(lb.episode_id, []).append(lb)
    return out
