"""
Preference losses on tabular policies: DPO, Dr. DPO and the cDPO / IPO / rDPO baselines

All losses act on the per-pair margin

    delta = phi'(pi(y_w|x)/pi_ref(y_w|x)) - phi'(pi(y_l|x)/pi_ref(y_l|x)),   u = beta * delta

and reduce over the dataset in its stored order. Under the default KL
generator phi'(t) = ln t and delta is the plain log-ratio margin of DPO.
"""

import numpy as np
from numpy.typing import ArrayLike

from drdpo.core import (
    PreferenceDataset,
    PreferencePair,
    TabularPolicy,
    check_beta,
    pair_log_ratio_margins,
    pair_log_ratios,
)
from drdpo.divergence import KL, phi_derivative_log
from drdpo.errors import ConfigError
from drdpo.schemas import LossKind, LossSpec, PhiFamily


def softplus(u: ArrayLike) -> np.ndarray:
    return np.logaddexp(0.0, u)


def log_sigmoid(u: ArrayLike) -> np.ndarray:
    """log sigma(u) = -softplus(-u), exact in both tails."""
    return -softplus(-np.asarray(u, dtype=np.float64))


def _require_pairs(dataset: PreferenceDataset) -> None:
    if len(dataset) == 0:
        raise ConfigError("loss over an empty preference dataset")


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 <= epsilon < 0.5:
        raise ConfigError(f"epsilon must lie in [0, 0.5), got {epsilon}")


def pair_margins(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    phi: PhiFamily = KL,
) -> np.ndarray:
    if phi.kind == "kl":
        return pair_log_ratio_margins(policy, reference, dataset)
    chosen, rejected = pair_log_ratios(policy, reference, dataset)
    return phi_derivative_log(phi, chosen) - phi_derivative_log(phi, rejected)


def h_dpo(policy: TabularPolicy, reference: TabularPolicy, pair: PreferencePair, beta: float) -> float:
    """Per-pair DPO log-likelihood log sigma(r_w - r_l) under implicit rewards."""
    dataset = PreferenceDataset(pairs=[pair], space=policy.space)
    return float(h_values(policy, reference, dataset, beta)[0])


def h_values(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    beta: float,
    phi: PhiFamily = KL,
) -> np.ndarray:
    check_beta(beta)
    return log_sigmoid(beta * pair_margins(policy, reference, dataset, phi))


def expected_loss(h: ArrayLike) -> float:
    """-E[h] with uniform pair weights."""
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0:
        raise ConfigError("loss over an empty preference dataset")
    return float(np.mean(-h))


def tilted_loss(h: ArrayLike, beta_prime: float) -> float:
    """-beta' log E[exp(h / beta')], evaluated after subtracting max h."""
    check_beta(beta_prime, "beta_prime")
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0:
        raise ConfigError("loss over an empty preference dataset")
    top = float(np.max(h))
    shifted = (h - top) / beta_prime
    # log1p(mean(expm1)) keeps the beta' -> inf limit exact
    return float(-top - beta_prime * np.log1p(np.mean(np.expm1(shifted))))


def dpo_loss(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    beta: float,
    phi: PhiFamily = KL,
) -> float:
    _require_pairs(dataset)
    return expected_loss(h_values(policy, reference, dataset, beta, phi))


def dr_dpo_loss(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    beta: float,
    beta_prime: float,
    phi: PhiFamily = KL,
) -> float:
    """Dr. DPO: the KL worst-case reweighting of pairs, in closed form."""
    _require_pairs(dataset)
    return tilted_loss(h_values(policy, reference, dataset, beta, phi), beta_prime)


def cdpo_loss(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    beta: float,
    epsilon: float,
    phi: PhiFamily = KL,
) -> float:
    """Conservative DPO: labels smoothed towards the flipped orientation by epsilon."""
    _check_epsilon(epsilon)
    _require_pairs(dataset)
    check_beta(beta)
    u = beta * pair_margins(policy, reference, dataset, phi)
    losses = (1.0 - epsilon) * softplus(-u) + epsilon * softplus(u)
    return float(np.mean(losses))


def ipo_loss(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    tau: float,
    phi: PhiFamily = KL,
) -> float:
    """IPO: squared regression of the margin onto 1 / (2 tau)."""
    check_beta(tau, "tau")
    _require_pairs(dataset)
    delta = pair_margins(policy, reference, dataset, phi)
    return float(np.mean((delta - 1.0 / (2.0 * tau)) ** 2))


def rdpo_loss(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    beta: float,
    epsilon: float,
    phi: PhiFamily = KL,
) -> float:
    """Robust DPO: unbiased loss under a known flip rate epsilon."""
    _check_epsilon(epsilon)
    _require_pairs(dataset)
    check_beta(beta)
    u = beta * pair_margins(policy, reference, dataset, phi)
    losses = ((1.0 - epsilon) * softplus(-u) - epsilon * softplus(u)) / (1.0 - 2.0 * epsilon)
    return float(np.mean(losses))


def evaluate_loss(
    policy: TabularPolicy, reference: TabularPolicy, dataset: PreferenceDataset, spec: LossSpec
) -> float:
    if spec.kind is LossKind.DPO:
        return dpo_loss(policy, reference, dataset, spec.beta, spec.phi)
    if spec.kind is LossKind.DRDPO:
        return dr_dpo_loss(policy, reference, dataset, spec.beta, spec.beta_prime, spec.phi)
    if spec.kind is LossKind.CDPO:
        return cdpo_loss(policy, reference, dataset, spec.beta, spec.epsilon, spec.phi)
    if spec.kind is LossKind.IPO:
        return ipo_loss(policy, reference, dataset, spec.tau, spec.phi)
    if spec.kind is LossKind.RDPO:
        return rdpo_loss(policy, reference, dataset, spec.beta, spec.epsilon, spec.phi)
    raise ConfigError(f"unknown loss kind {spec.kind!r}")
