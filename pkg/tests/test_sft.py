import math

import numpy as np
import pytest

from guirise.labeler import MockLabelerClient, label_episodes
from guirise.policy import ToyPolicy, sim_vocab
from guirise.policy.base import PolicyContext, UnknownToken
from guirise.sft import PseudoLabel, build_examples, build_target, ce_loss, read_labels, train_sft, write_labels
from guirise.sim import SimConfig, generate_dataset
from guirise.trajectory import GuiAction

import gradcheck


@pytest.fixture(scope="module")
def labeled():
    eps = generate_dataset(SimConfig(), 50)
    labels, rejected = label_episodes(eps, MockLabelerClient())
    assert not rejected
    return eps, labels


def test_target_round_trip(small_policy, labeled):
    eps, labels = labeled
    for ep in eps[:10]:
        for lb in labels[ep.episode_id]:
            y = build_target(lb, small_policy)
            assert y[-1] == small_policy.vocab.eos
            t = small_policy.decode(y)
            assert t.tags_ok
            assert t.parsed_action.action_type == lb.gt_action.action_type
            assert t.parsed_action.value == lb.gt_action.value
            # coordinates are quantized to bin centres, still inside the target box
            box = ep.steps[lb.t].gt_bbox
            assert box[0] <= t.parsed_action.position[0] <= box[2]
            assert t.history_summary.strip() == lb.summary


def test_empty_reasoning_keeps_all_tags(small_policy):
    lb = PseudoLabel("e", 0, "", "", "", GuiAction("ENTER"))
    toks = [small_policy.vocab.tokens[i] for i in build_target(lb, small_policy)]
    for name in ("Progress Estimation", "Decision Reasoning", "Action", "Memory Summary"):
        assert f"<{name}>" in toks and f"</{name}>" in toks


def test_out_of_vocabulary_word_is_unk(small_policy):
    lb = PseudoLabel("e", 0, "zanzibar", "", "", GuiAction("ENTER"))
    y = build_target(lb, small_policy)
    assert y[1] == small_policy.vocab.unk


def test_uniform_loss(small_policy, episodes):
    ctx = PolicyContext(episodes[0].instruction, episodes[0].steps[0].observation, "")
    y = [4, 8, 15, 16, 23, 42]
    loss, grad = ce_loss(small_policy, ctx, y)
    assert math.isclose(loss, len(y) * math.log(small_policy.V), rel_tol=1e-12)
    with pytest.raises(UnknownToken):
        ce_loss(small_policy, ctx, [])


def test_loss_is_non_negative(small_policy, episodes):
    rng = np.random.default_rng(0)
    ctx = PolicyContext(episodes[0].instruction, episodes[0].steps[0].observation, "")
    for _ in range(20):
        theta = rng.normal(scale=5, size=small_policy.theta.shape)
        assert ce_loss(small_policy, ctx, rng.integers(0, small_policy.V, 10), theta)[0] >= 0


def test_loss_gradient_matches_finite_differences():
    err, n = gradcheck.run("ce", 50, seed=100)
    assert err < 1e-4


def test_examples_chain_previous_summary(small_policy, labeled):
    eps, labels = labeled
    ex = build_examples(eps[:3], labels, small_policy)
    assert len(ex) == sum(len(e.steps) for e in eps[:3])
    i = 0
    for ep in eps[:3]:
        prev = ""
        for lb in labels[ep.episode_id]:
            assert ex[i].ctx.history == prev
            prev = lb.summary
            i += 1


def test_out_of_order_labels_rejected(small_policy, labeled):
    eps, labels = labeled
    ep = eps[0]
    swapped = {ep.episode_id: list(reversed(labels[ep.episode_id]))}
    with pytest.raises(ValueError):
        build_examples([ep], swapped, small_policy)
    short = {ep.episode_id: labels[ep.episode_id][:-1]}
    with pytest.raises(ValueError):
        build_examples([ep], short, small_policy)
    lb = labels[ep.episode_id][0]
    wrong = {ep.episode_id: [PseudoLabel(lb.episode_id, 0, "", "", "", GuiAction("ENTER"))]
             + labels[ep.episode_id][1:]}
    with pytest.raises(ValueError):
        build_examples([ep], wrong, small_policy)


@pytest.mark.parametrize("optimizer", ["sgd", "adagrad"])
def test_training_lowers_loss(labeled, optimizer):
    eps, labels = labeled
    pol = ToyPolicy(sim_vocab(SimConfig()), 1 << 12)
    ex = build_examples(eps, labels, pol)
    init = np.mean([ce_loss(pol, e.ctx, e.target)[0] for e in ex])
    hist = train_sft(pol, ex, 500, 0.5, 8, np.random.default_rng(0), optimizer)
    after = np.mean([ce_loss(pol, e.ctx, e.target)[0] for e in ex])
    assert len(hist) == 500 and after < init and hist[-1] < hist[0]


def test_unknown_optimizer(small_policy):
    with pytest.raises(ValueError):
        train_sft(small_policy, [], 1, optimizer="adam")


def test_label_file_round_trip(tmp_path, labeled):
    eps, labels = labeled
    flat = [lb for ep in eps for lb in labels[ep.episode_id]]
    write_labels(tmp_path / "l.jsonl", flat)
    assert read_labels(tmp_path / "l.jsonl") == labels
