"""Stage functions shared by the CLI, the ablation harness and the acceptance tests."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .grpo import GrpoLogs, IterStats, build_items, train_grpo
from .labeler import MockLabelerClient, label_episodes
from .metrics import ReportRow, action_accuracy, step_metrics
from .policy.base import PolicyContext
from .policy.toy import ToyPolicy
from .policy.vocab import sim_vocab
from .sft import PseudoLabel, build_examples, train_sft
from .sim import SimConfig, generate_dataset
from .trajectory import Episode

log = logging.getLogger(__name__)

# independent random streams derived from the root seed
STREAM_SFT = 1
STREAM_GRPO = 2


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng([seed, which])


def sim_config(cfg: RunConfig, seed: int) -> SimConfig:
    return dataclasses.replace(cfg.sim, rng_seed=seed)


def generate_splits(cfg: RunConfig, seed: int) -> tuple[list[Episode], list[Episode]]:
    sc = sim_config(cfg, seed)
    train = generate_dataset(sc, cfg.data.train_episodes)
    test = generate_dataset(sc, cfg.data.test_episodes, start=cfg.data.test_offset)
    return train, test


def make_policy(cfg: RunConfig, theta: Optional[np.ndarray] = None) -> ToyPolicy:
    return ToyPolicy(sim_vocab(cfg.sim), cfg.policy.n_buckets, theta, cfg.policy.max_len, cfg.sim.action_space)


def run_label(episodes: Sequence[Episode], cfg: RunConfig, client=None, workers: int = 1):
    client = client or MockLabelerClient()
    return label_episodes(episodes, client, workers, thought=cfg.labeler.thought,
                          max_retries=cfg.labeler.max_retries)


def run_sft(policy: ToyPolicy, episodes: Sequence[Episode], labels: dict[str, Sequence[PseudoLabel]],
            cfg: RunConfig, seed: int) -> list[float]:
    eps = [ep for ep in episodes[: cfg.data.sft_episodes] if ep.episode_id in labels]
    examples = build_examples(eps, labels, policy)
    return train_sft(policy, examples, cfg.sft.steps, cfg.sft.learning_rate, cfg.sft.batch_size,
                     stream(seed, STREAM_SFT), cfg.sft.optimizer)


def run_grpo(policy: ToyPolicy, episodes: Sequence[Episode], labels: dict[str, Sequence[PseudoLabel]],
             cfg: RunConfig, seed: int, logs: Optional[GrpoLogs] = None, on_groups=None) -> list[IterStats]:
    eps = [ep for ep in episodes[: cfg.data.rl_episodes] if ep.episode_id in labels]
    items = build_items(eps, labels)
    return train_grpo(policy, items, cfg.reward, cfg.grpo, stream(seed, STREAM_GRPO), logs, on_groups)


@dataclass
class EvalResult:
    rows: list[ReportRow]
    final_step_acc: list[int]  # action accuracy on each episode's last step


def evaluate_policy(policy, episodes: Sequence[Episode], split: str = "test") -> EvalResult:
    """Greedy decoding along the ground-truth screens; the policy's own summaries are chained."""
    space = getattr(policy, "space", None)
    rows, finals = [], []
    for ep in episodes:
        history = ""
        acc = 0
        for step in ep.steps:
            turn = policy.sample(PolicyContext(ep.instruction, step.observation, history), 1, "greedy")[0].turn
            pred = turn.parsed_action
            kw = {} if space is None else {"space": space}
            ele, f1, sr = step_metrics(pred, step.gt_action, step.gt_bbox, **kw)
            acc = action_accuracy(pred, step.gt_action, step.gt_bbox, **kw)
            rows.append(ReportRow(split, ep.episode_id, step.index, ele, f1, sr, acc))
            history = turn.history_summary.strip()
        finals.append(acc)
    return EvalResult(rows, finals)


@dataclass
class RunResult:
    policy: ToyPolicy
    sft_loss: list[float]
    grpo_stats: list[IterStats]
    eval: Optional[EvalResult]
    rejected: list[str]


def train_and_eval(cfg: RunConfig, seed: int, sft: Optional[bool] = None, evaluate: bool = True,
                   logs: Optional[GrpoLogs] = None, on_groups=None) -> RunResult:
    """gen-data -> mock label -> (SFT) -> GRPO -> greedy eval, all from one seed."""
    if sft is None:
        sft = cfg.policy.init == "sft"
    train, test = generate_splits(cfg, seed)
    labels, rejected = run_label(train, cfg)
    policy = make_policy(cfg)
    loss = run_sft(policy, train, labels, cfg, seed) if sft else []
    stats = run_grpo(policy, train, labels, cfg, seed, logs, on_groups)
    ev = evaluate_policy(policy, test) if evaluate else None
    return RunResult(policy, loss, stats, ev, rejected)


# ---------------------------------------------------------------- parameter files

def save_params(path, theta: np.ndarray) -> None:
    """Sparse dump of the non-zero rows: shape, row ids, row values (three .npy records)."""
    rows = np.flatnonzero(np.any(theta != 0, axis=1))
    with open(path, "wb") as fh:
        np.save(fh, np.asarray(theta.shape, dtype=np.int64))
        np.save(fh, rows.astype(np.int64))
        np.save(fh, theta[rows])


def load_params(path) -> np.ndarray:
    with open(path, "rb") as fh:
        shape = tuple(int(s) for s in np.load(fh))
        rows = np.load(fh)
        values = np.load(fh)
    theta = np.zeros(shape)
    theta[rows] = values
    return theta
