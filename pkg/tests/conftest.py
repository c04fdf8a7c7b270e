import os

import numpy as np
import pytest
from hypothesis import settings

from guirise.config import RunConfig, override
from guirise.policy import ToyPolicy, sim_vocab
from guirise.sim import SimConfig, generate_dataset

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SMALL_BUCKETS = 1 << 10


@pytest.fixture(scope="session")
def sim_cfg():
    return SimConfig()


@pytest.fixture(scope="session")
def episodes(sim_cfg):
    return generate_dataset(sim_cfg, 20)


@pytest.fixture(scope="session")
def mixed_episodes():
    out = []
    for fam, length in (("click-sequence", (3, 3)), ("fill-and-submit", (3, 4)),
                        ("search-then-select", (3, 3)), ("memory-probe", (4, 4))):
        out += generate_dataset(SimConfig(task_family=fam, episode_length=length), 5)
    return out


@pytest.fixture
def small_policy(sim_cfg):
    return ToyPolicy(sim_vocab(sim_cfg), SMALL_BUCKETS)


@pytest.fixture(scope="session")
def tiny_cfg():
    cfg = RunConfig()
    cfg = override(cfg, "data", sft_episodes=8, rl_episodes=12, test_episodes=6)
    cfg = override(cfg, "sft", steps=40)
    cfg = override(cfg, "grpo", iterations=15)
    return override(cfg, "policy", n_buckets=1 << 12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
