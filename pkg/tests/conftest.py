"""
Shared fixtures for the drdpo test suite
"""

import numpy as np
import pytest

from drdpo.config import get_settings
from drdpo.core import PreferenceDataset, PreferencePair, TabularPolicy
from drdpo.schemas import NoiseSpec, PromptSpace, TaskSpec
from drdpo.synth import build_task
from drdpo.verify import random_instance


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run full-size directional experiments"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def fresh_settings():
    """Settings are cached per process; tests that touch env vars need a clean cache."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(20240519)


@pytest.fixture
def space():
    return PromptSpace(num_prompts=2, completions_per_prompt=3)


@pytest.fixture
def policy_pair(space):
    """A non-trivial policy and reference on the 2x3 space."""
    policy = TabularPolicy(logits=[[0.5, -0.2, 1.0], [0.0, 0.3, -0.7]], space=space)
    reference = TabularPolicy(logits=[[0.1, 0.0, -0.4], [0.2, -0.1, 0.6]], space=space)
    return policy, reference


@pytest.fixture
def pairs(space):
    return PreferenceDataset(
        pairs=[
            PreferencePair(prompt=0, chosen=0, rejected=1),
            PreferencePair(prompt=0, chosen=2, rejected=1),
            PreferencePair(prompt=1, chosen=1, rejected=2),
            PreferencePair(prompt=1, chosen=2, rejected=0, flipped=True),
            PreferencePair(prompt=0, chosen=1, rejected=2),
        ],
        space=space,
    )


@pytest.fixture
def instance(rng):
    """Random (policy, reference, dataset, beta)."""
    return random_instance(rng)


@pytest.fixture
def tiny_task():
    spec = TaskSpec(space=PromptSpace(num_prompts=3, completions_per_prompt=4), seed=7)
    return build_task(spec, NoiseSpec(pairwise_p=0.2, seed=7), n_train=200, n_test=100)
