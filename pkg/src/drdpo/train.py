"""
Deterministic gradient-descent training of tabular policies, and the evaluation metrics

The policy starts as a copy of the reference and takes plain fixed-step
gradient steps; there is no momentum, schedule or early stopping.
"""

import logging
from typing import Iterator, List, Optional, Tuple

import numpy as np

from drdpo.core import (
    PreferenceDataset,
    RewardTable,
    TabularPolicy,
    check_beta,
    kl_policy,
    pair_log_ratio_margins,
)
from drdpo.dro import bound_report, gibbs_weight_stats, gibbs_weights
from drdpo.errors import ConfigError, NonFiniteLossError, ShapeError
from drdpo.grad import grad_loss
from drdpo.losses import evaluate_loss, h_values
from drdpo.schemas import LossKind, TrainConfig, TrainReport, WeightStats
from drdpo.synth import stream

logger = logging.getLogger(__name__)

BOUND_DELTA = 0.05
BOUND_H_FLOOR = -50.0


def _minibatches(n: int, config: TrainConfig) -> Iterator[np.ndarray]:
    """Contiguous blocks of a fresh seeded permutation per epoch."""
    rng = stream(config.seed, "batch")
    size = config.batch_size
    while True:
        order = rng.permutation(n)
        for start in range(0, n, size):
            yield order[start:start + size]


def _record(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    config: TrainConfig,
    step: int,
    curve: List[Tuple[int, float]],
    stats: Optional[List[WeightStats]],
) -> None:
    loss = evaluate_loss(policy, reference, dataset, config.loss)
    if not np.isfinite(loss):
        raise NonFiniteLossError(step, loss)
    curve.append((step, loss))
    if stats is not None:
        h = h_values(policy, reference, dataset, config.loss.beta, config.loss.phi)
        low, high, mean = gibbs_weight_stats(gibbs_weights(h, config.loss.beta_prime))
        stats.append(WeightStats(step=step, min=low, max=high, mean=mean))
    logger.debug(f"step {step}: loss {loss:.6f}")


def train(
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    config: TrainConfig,
    *,
    clean_test: Optional[PreferenceDataset] = None,
    reward: Optional[RewardTable] = None,
    bound_floor: float = BOUND_H_FLOOR,
    bound_delta: float = BOUND_DELTA,
) -> Tuple[TabularPolicy, TrainReport]:
    """
    Optimize ``config.loss`` from pi_theta = pi_ref.

    Args:
        reference: Reference policy; also the initial policy.
        dataset: Training pairs, possibly with flipped orientations.
        config: Loss, step size, number of steps and batching.
        clean_test: Held-out pairs in ground-truth orientation. Without it the
            accuracy is measured on ``dataset.restore_orientation()``.
        reward: Latent reward table; enables ``final_expected_reward``.
        bound_floor: Clamp for the lowest h when bounding a Dr. DPO run.
        bound_delta: Failure probability of that bound.

    Returns:
        The trained policy and its TrainReport. The loss curve holds the
        full-batch training loss at step 0, every ``record_every`` steps and
        the last step.

    Raises:
        NonFiniteLossError: the loss or the logits stopped being finite.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty preference dataset")
    if dataset.space != reference.space:
        raise ShapeError(f"dataset space {dataset.space.shape} != reference {reference.space.shape}")

    spec = config.loss
    n = len(dataset)
    full_batch = config.batch_size == 0 or config.batch_size >= n
    batches = None if full_batch else _minibatches(n, config)
    curve: List[Tuple[int, float]] = []
    stats: Optional[List[WeightStats]] = [] if spec.kind is LossKind.DRDPO else None

    logger.info(
        f"training {spec.kind.value} (beta={spec.beta}, beta'={spec.beta_prime}, phi={spec.phi}) "
        f"for {config.steps} steps on {n} pairs, "
        f"{'full batch' if full_batch else f'batch {config.batch_size}'}"
    )

    logits = np.array(reference.logits)
    policy = reference
    _record(policy, reference, dataset, config, 0, curve, stats)
    for step in range(1, config.steps + 1):
        batch = dataset if batches is None else dataset.take(next(batches))
        logits -= config.learning_rate * grad_loss(policy, reference, batch, spec).values
        if not np.all(np.isfinite(logits)):
            raise NonFiniteLossError(step, float(logits[~np.isfinite(logits)][0]))
        policy = TabularPolicy(logits=logits, space=reference.space)
        if step % config.record_every == 0 or step == config.steps:
            _record(policy, reference, dataset, config, step, curve, stats)

    test = clean_test if clean_test is not None else dataset.restore_orientation()
    bound = None
    if stats is not None:
        h = h_values(policy, reference, dataset, spec.beta, spec.phi)
        bound = bound_report(h, spec.beta_prime, bound_delta, bound_floor)
    report = TrainReport(
        loss=spec,
        loss_curve=curve,
        final_loss=curve[-1][1],
        final_preference_accuracy=eval_preference_accuracy(policy, reference, spec.beta, test),
        final_expected_reward=None if reward is None else eval_expected_reward(policy, reward),
        final_kl=eval_kl(policy, reference),
        weight_stats=stats,
        bound=bound,
    )
    logger.info(
        f"finished {spec.kind.value}: loss {report.final_loss:.4f}, "
        f"accuracy {report.final_preference_accuracy:.4f}, kl {report.final_kl:.4f}"
    )
    return policy, report


def eval_preference_accuracy(
    policy: TabularPolicy, reference: TabularPolicy, beta: float, clean_test: PreferenceDataset
) -> float:
    """Fraction of pairs whose implicit reward ranks y_w above y_l; ties score 0.5."""
    check_beta(beta)
    if len(clean_test) == 0:
        raise ConfigError("preference accuracy of an empty test set")
    gaps = beta * pair_log_ratio_margins(policy, reference, clean_test)
    scores = np.where(gaps > 0, 1.0, np.where(gaps == 0, 0.5, 0.0))
    return float(scores.mean())


def eval_expected_reward(policy: TabularPolicy, reward: RewardTable) -> float:
    """E_{x uniform, y ~ pi}[r*(x, y)], summed exactly."""
    if policy.space != reward.space:
        raise ShapeError(f"policy space {policy.space.shape} != reward {reward.space.shape}")
    return float(np.mean(np.sum(policy.probs * reward.values, axis=1)))


def eval_kl(policy: TabularPolicy, reference: TabularPolicy) -> float:
    return kl_policy(policy, reference)
