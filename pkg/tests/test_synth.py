"""
Unit tests for synthetic task generation and label noise
"""

import math
from collections import Counter

import numpy as np
import pytest
from pydantic import ValidationError

from drdpo.core import RewardTable
from drdpo.errors import ConfigError
from drdpo.schemas import NoiseSpec, PromptSpace, TaskSpec
from drdpo.synth import (
    build_task,
    flip_pairs,
    gen_reference,
    gen_reward,
    sample_preferences,
    stream,
)


def _unordered(dataset):
    return Counter((p.prompt, frozenset((p.chosen, p.rejected))) for p in dataset.pairs)


def test_streams_are_deterministic_and_distinct():
    a = stream(3, "reward").random(5)

    np.testing.assert_array_equal(a, stream(3, "reward").random(5))
    assert not np.array_equal(a, stream(3, "flip").random(5))
    assert not np.array_equal(a, stream(4, "reward").random(5))


def test_negative_seed_is_accepted():
    assert stream(-1, "reward").random() == stream(-1, "reward").random()


def test_reward_deterministic():
    spec = TaskSpec(seed=11)

    assert gen_reward(spec) == gen_reward(spec)
    assert gen_reward(spec) != gen_reward(TaskSpec(seed=12))


def test_reward_scale_zero_gives_zeros():
    reward = gen_reward(TaskSpec(reward_scale=0.0))

    np.testing.assert_array_equal(reward.values, 0.0)


def test_reward_range_and_mean():
    spec = TaskSpec(space=PromptSpace(num_prompts=100, completions_per_prompt=100), reward_scale=2.0)
    values = gen_reward(spec).values
    sigma = math.sqrt(4.0 / 3.0 / values.size)

    assert values.min() >= -2.0 and values.max() <= 2.0
    assert abs(values.mean()) <= 4 * sigma


def test_reference_half_mix_is_uniform():
    reward = gen_reward(TaskSpec(seed=5))

    np.testing.assert_array_equal(gen_reference(reward, 0.5, 3.0).logits, 0.0)


def test_reference_inversion_negates_logits():
    reward = gen_reward(TaskSpec(seed=5))
    aligned = gen_reference(reward, 0.0, 2.0)
    inverted = gen_reference(reward, 1.0, 2.0)

    np.testing.assert_array_equal(aligned.logits, 2.0 * reward.values)
    np.testing.assert_array_equal(inverted.logits, -aligned.logits)


def test_sharp_reference_concentrates_on_best():
    reward = RewardTable.from_values([[1.0, 0.0, -1.0]])

    assert gen_reference(reward, 0.0, 50.0).probs[0, 0] > 1 - 1e-15
    assert gen_reference(reward, 1.0, 50.0).probs[0, 2] > 1 - 1e-15


def test_reference_rejects_bad_parameters():
    reward = RewardTable.from_values([[1.0, 0.0]])

    with pytest.raises(ConfigError):
        gen_reference(reward, 1.5, 1.0)
    with pytest.raises(ConfigError):
        gen_reference(reward, 0.2, 0.0)


def test_bradley_terry_frequency():
    """sigma(ln 3) = 0.75 of the comparisons prefer the first completion"""
    reward = RewardTable.from_values([[math.log(3.0), 0.0]])
    n = 100_000
    dataset = sample_preferences(reward, n, seed=1)
    share = float(np.mean(dataset.columns.chosen == 0))

    assert abs(share - 0.75) <= 4 * math.sqrt(0.75 * 0.25 / n)


def test_equal_rewards_are_coin_flips():
    reward = RewardTable.from_values([[0.0, 0.0]])
    n = 20_000
    share = float(np.mean(sample_preferences(reward, n, seed=2).columns.chosen == 0))

    assert abs(share - 0.5) <= 4 * math.sqrt(0.25 / n)


def test_sampled_pairs_are_valid():
    reward = gen_reward(TaskSpec(space=PromptSpace(num_prompts=4, completions_per_prompt=3)))
    dataset = sample_preferences(reward, 500, seed=0)
    cols = dataset.columns

    assert len(dataset) == 500
    assert np.all(cols.chosen != cols.rejected)
    assert set(cols.prompts.tolist()) == {0, 1, 2, 3}
    assert not cols.flipped.any()


def test_sample_needs_pairs():
    with pytest.raises(ConfigError):
        sample_preferences(RewardTable.from_values([[0.0, 1.0]]), 0, seed=0)


def test_flip_extremes(tiny_task):
    clean = tiny_task.train.restore_orientation()

    assert flip_pairs(clean, 0.0, seed=1) == clean
    flipped = flip_pairs(clean, 1.0, seed=1)
    assert flipped.flipped_fraction == 1.0
    assert all(f.chosen == c.rejected and f.rejected == c.chosen for f, c in zip(flipped.pairs, clean.pairs))


def test_flip_twice_with_same_seed_restores(tiny_task):
    clean = tiny_task.train.restore_orientation()

    assert flip_pairs(flip_pairs(clean, 0.3, seed=9), 0.3, seed=9) == clean


def test_flip_fraction_and_multiset():
    reward = gen_reward(TaskSpec(seed=3))
    clean = sample_preferences(reward, 10_000, seed=3)
    noisy = flip_pairs(clean, 0.4, seed=3)

    assert abs(noisy.flipped_fraction - 0.4) <= 4 * math.sqrt(0.24 / 10_000)
    assert _unordered(noisy) == _unordered(clean)
    assert noisy.restore_orientation() == clean


def test_flip_rate_out_of_range(tiny_task):
    with pytest.raises(ConfigError):
        flip_pairs(tiny_task.train, 1.2, seed=0)


def test_noise_spec_validates_rates():
    with pytest.raises(ValidationError):
        NoiseSpec(pairwise_p=-0.1)


def test_build_task_shapes(tiny_task):
    assert tiny_task.reward.space == tiny_task.reference.space == tiny_task.train.space
    assert len(tiny_task.train) == 200
    assert len(tiny_task.test) == 100
    assert tiny_task.test.flipped_fraction == 0.0


def test_train_size_leaves_other_streams_alone():
    """Growing the train set never perturbs the reward or the test set"""
    spec = TaskSpec(space=PromptSpace(num_prompts=3, completions_per_prompt=4), seed=7)
    noise = NoiseSpec(pairwise_p=0.2, seed=7)
    small = build_task(spec, noise, n_train=200, n_test=100)
    large = build_task(spec, noise, n_train=300, n_test=100)

    assert small.reward == large.reward
    assert small.test == large.test
