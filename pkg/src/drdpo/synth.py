"""
Synthetic Bradley-Terry preference tasks with pointwise and pairwise noise

Randomness comes from named Philox streams (reward, preference, flip, test,
batch), so changing the size of one draw never perturbs another.
"""

import logging
import zlib

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.special import expit

from drdpo.core import PreferenceDataset, RewardTable, TabularPolicy
from drdpo.errors import ConfigError
from drdpo.schemas import NoiseSpec, TaskSpec

logger = logging.getLogger(__name__)

_SEED_MASK = (1 << 64) - 1


def stream(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator for one named stream of a seed."""
    sequence = np.random.SeedSequence(seed & _SEED_MASK, spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(sequence))


def gen_reward(spec: TaskSpec) -> RewardTable:
    """r*(x, y) drawn i.i.d. from U[-reward_scale, reward_scale]."""
    rng = stream(spec.seed, "reward")
    values = rng.uniform(-spec.reward_scale, spec.reward_scale, size=spec.space.shape)
    return RewardTable(values=values, space=spec.space)


def gen_reference(reward: RewardTable, rho: float, sharpness: float) -> TabularPolicy:
    """softmax(lambda ((1 - rho) r* + rho (-r*))).

    rho = 0 follows the reward, rho = 1 inverts it, rho = 0.5 is uniform.
    """
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"pointwise rho must lie in [0, 1], got {rho}")
    if not sharpness > 0:
        raise ConfigError(f"reference sharpness must be positive, got {sharpness}")
    logits = sharpness * ((1.0 - rho) * reward.values + rho * (-reward.values))
    return TabularPolicy(logits=logits, space=reward.space)


def sample_preferences(
    reward: RewardTable, n: int, seed: int, stream_name: str = "preference"
) -> PreferenceDataset:
    """n Bradley-Terry comparisons: uniform prompt, uniform distinct pair, winner ~ sigma(r1 - r2)."""
    if n < 1:
        raise ConfigError(f"need at least one preference pair, got n={n}")
    rng = stream(seed, stream_name)
    num_prompts, k = reward.space.shape
    prompts = rng.integers(0, num_prompts, size=n)
    first = rng.integers(0, k, size=n)
    second = rng.integers(0, k - 1, size=n)
    second += second >= first
    gap = reward.values[prompts, first] - reward.values[prompts, second]
    first_wins = rng.random(n) < expit(gap)
    chosen = np.where(first_wins, first, second)
    rejected = np.where(first_wins, second, first)
    logger.debug(f"sampled {n} pairs from stream {stream_name!r} (seed {seed})")
    return PreferenceDataset.from_columns(
        reward.space, prompts, chosen, rejected, np.zeros(n, dtype=bool)
    )


def flip_pairs(dataset: PreferenceDataset, p: float, seed: int) -> PreferenceDataset:
    """Swap each pair independently with probability p, toggling its flag."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"flip probability must lie in [0, 1], got {p}")
    rng = stream(seed, "flip")
    swap = rng.random(len(dataset)) < p
    pairs = [pair.swapped() if s else pair for pair, s in zip(dataset.pairs, swap)]
    logger.debug(f"flipped {int(swap.sum())}/{len(dataset)} pairs at p={p}")
    return PreferenceDataset.model_construct(pairs=pairs, space=dataset.space)


class SyntheticTask(BaseModel):
    """Everything one run needs: latent reward, reference, noisy train and clean test sets."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    reward: RewardTable
    reference: TabularPolicy
    train: PreferenceDataset
    test: PreferenceDataset


def build_task(task: TaskSpec, noise: NoiseSpec, n_train: int, n_test: int) -> SyntheticTask:
    reward = gen_reward(task)
    reference = gen_reference(reward, noise.pointwise_rho, task.ref_sharpness)
    clean = sample_preferences(reward, n_train, task.seed)
    train = flip_pairs(clean, noise.pairwise_p, noise.seed)
    test = sample_preferences(reward, n_test, task.seed, stream_name="test")
    logger.info(
        f"task seed={task.seed}: {n_train} train pairs ({train.flipped_fraction:.1%} flipped), "
        f"{n_test} clean test pairs, rho={noise.pointwise_rho}"
    )
    return SyntheticTask(reward=reward, reference=reference, train=train, test=test)
