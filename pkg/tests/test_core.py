"""
Unit tests for tabular policies, log-ratios and policy KL
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from drdpo.core import (
    PreferenceDataset,
    PreferencePair,
    RewardTable,
    TabularPolicy,
    implicit_reward,
    kl_policy,
    log_prob,
    log_ratio,
    pair_log_ratio_margins,
)
from drdpo.errors import ConfigError, RangeError, ShapeError
from drdpo.schemas import PromptSpace


def test_uniform_log_prob(space):
    """Uniform policy assigns -ln K to every completion"""
    policy = TabularPolicy.uniform(space)

    assert log_prob(policy, 1, 2) == pytest.approx(-math.log(3), abs=1e-15)


def test_log_prob_matches_softmax():
    """Logits [0, ln 3] give log(3/4) for the second completion"""
    policy = TabularPolicy.from_logits([[0.0, math.log(3.0)]])

    assert log_prob(policy, 0, 1) == pytest.approx(math.log(0.75), abs=1e-14)


def test_log_prob_extreme_logits_stay_finite():
    """Logits of +-1000 produce finite log-probabilities"""
    policy = TabularPolicy.from_logits([[1000.0, -1000.0]])

    assert log_prob(policy, 0, 0) == pytest.approx(0.0, abs=1e-12)
    assert log_prob(policy, 0, 1) == pytest.approx(-2000.0)


def test_row_shift_invariance(policy_pair):
    """Adding a constant to one row leaves its log-probabilities unchanged"""
    policy, _ = policy_pair
    shifted = TabularPolicy(logits=np.asarray(policy.logits) + [[5.0], [-3.0]], space=policy.space)

    np.testing.assert_allclose(shifted.log_probs, policy.log_probs, atol=1e-13)


def test_log_prob_out_of_range(space):
    policy = TabularPolicy.uniform(space)

    with pytest.raises(RangeError):
        log_prob(policy, 2, 0)
    with pytest.raises(RangeError):
        log_prob(policy, 0, 3)


def test_log_ratio_of_self_is_zero(policy_pair):
    policy, _ = policy_pair

    assert log_ratio(policy, policy, 0, 1) == 0.0


def test_log_ratio_against_uniform():
    """pi = [0.75, 0.25], pi_ref uniform gives log(1.5)"""
    policy = TabularPolicy.from_logits([[math.log(3.0), 0.0]])
    reference = TabularPolicy.uniform(policy.space)

    assert log_ratio(policy, reference, 0, 0) == pytest.approx(math.log(1.5), abs=1e-14)


def test_log_ratio_shape_mismatch(space):
    other = TabularPolicy.uniform(PromptSpace(num_prompts=3, completions_per_prompt=3))

    with pytest.raises(ShapeError):
        log_ratio(TabularPolicy.uniform(space), other, 0, 0)


def test_implicit_reward_is_scaled_log_ratio(policy_pair):
    policy, reference = policy_pair

    assert implicit_reward(policy, reference, 1, 2, 0.1) == pytest.approx(
        0.1 * log_ratio(policy, reference, 1, 2), rel=1e-15
    )


def test_implicit_reward_rejects_non_positive_beta(policy_pair):
    policy, reference = policy_pair

    with pytest.raises(ConfigError):
        implicit_reward(policy, reference, 0, 0, 0.0)


def test_kl_of_identical_policies(policy_pair):
    policy, _ = policy_pair

    assert kl_policy(policy, policy) == 0.0


def test_kl_matches_naive_loop(rng):
    """Vectorized KL agrees with a double loop over prompts and completions"""
    space = PromptSpace(num_prompts=4, completions_per_prompt=5)
    policy = TabularPolicy(logits=rng.normal(size=space.shape), space=space)
    reference = TabularPolicy(logits=rng.normal(size=space.shape), space=space)

    expected = 0.0
    for x in range(4):
        p = np.exp(policy.logits[x]) / np.exp(policy.logits[x]).sum()
        q = np.exp(reference.logits[x]) / np.exp(reference.logits[x]).sum()
        expected += sum(p[y] * math.log(p[y] / q[y]) for y in range(5))
    expected /= 4

    assert kl_policy(policy, reference) == pytest.approx(expected, rel=1e-12)
    assert kl_policy(policy, reference) > 0


def test_kl_shape_mismatch(space):
    other = TabularPolicy.uniform(PromptSpace(num_prompts=2, completions_per_prompt=4))

    with pytest.raises(ShapeError):
        kl_policy(TabularPolicy.uniform(space), other)


def test_non_finite_logits_rejected(space):
    with pytest.raises(ValidationError):
        TabularPolicy(logits=[[0.0, np.nan, 0.0], [0.0, 0.0, 0.0]], space=space)
    with pytest.raises(ConfigError):
        TabularPolicy.from_logits([[0.0, np.inf]])


def test_logits_shape_must_match_space(space):
    with pytest.raises(ValidationError):
        TabularPolicy(logits=np.zeros((3, 3)), space=space)


def test_tables_are_read_only(policy_pair):
    policy, _ = policy_pair

    with pytest.raises(ValueError):
        policy.logits[0, 0] = 1.0


def test_policy_document_round_trip(policy_pair):
    policy, _ = policy_pair

    assert TabularPolicy.from_document(policy.to_document()) == policy


def test_reward_document_round_trip():
    reward = RewardTable.from_values([[0.25, -1.5], [2.0, 0.0]])

    assert RewardTable.from_document(reward.to_document()) == reward


def test_pair_needs_distinct_completions():
    with pytest.raises(ValidationError):
        PreferencePair(prompt=0, chosen=1, rejected=1)


def test_dataset_index_out_of_range(space):
    with pytest.raises(RangeError):
        PreferenceDataset(pairs=[PreferencePair(prompt=0, chosen=0, rejected=3)], space=space)


def test_swapped_toggles_flag():
    pair = PreferencePair(prompt=0, chosen=0, rejected=1)
    swapped = pair.swapped()

    assert (swapped.chosen, swapped.rejected, swapped.flipped) == (1, 0, True)
    assert swapped.swapped() == pair


def test_restore_orientation(pairs):
    restored = pairs.restore_orientation()

    assert restored.flipped_fraction == 0.0
    assert (restored.pairs[3].chosen, restored.pairs[3].rejected) == (0, 2)
    assert restored.pairs[:3] == pairs.pairs[:3]


def test_take_keeps_given_order(pairs):
    sub = pairs.take([4, 0])

    assert sub.pairs == [pairs.pairs[4], pairs.pairs[0]]


def test_columns(pairs):
    cols = pairs.columns

    assert cols.prompts.tolist() == [0, 0, 1, 1, 0]
    assert cols.flipped.tolist() == [False, False, False, True, False]
    assert pairs.flipped_fraction == pytest.approx(0.2)


def test_margins_match_log_ratios(policy_pair, pairs):
    policy, reference = policy_pair
    margins = pair_log_ratio_margins(policy, reference, pairs)

    for i, pair in enumerate(pairs.pairs):
        expected = log_ratio(policy, reference, pair.prompt, pair.chosen) - log_ratio(
            policy, reference, pair.prompt, pair.rejected
        )
        assert margins[i] == pytest.approx(expected, abs=1e-14)
