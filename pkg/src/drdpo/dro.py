"""
Closed forms of the KL-constrained DRO problems behind DPO and Dr. DPO

Pairwise (Dr. DPO) side:
    max_q  E_q[h] - beta' KL(q || base)
is attained by the Gibbs distribution q* ~ base * exp(h / beta') with value
beta' log E_base[exp(h / beta')]; gibbs_weights are q* / base.

Pointwise (reward-model) side:
    alpha* = -beta log E_ref[exp(r / beta)],   L* = exp((r + alpha*) / beta)
and beta*(eta) = sqrt(V_ref[r] / (2 eta)) minimizes the second-order
expansion of the alpha-eliminated dual  beta eta + beta log E_ref[exp(r / beta)].

Every closed form has a brute-force counterpart here or in tests.
"""

import logging
import math
from typing import Any, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp, rel_entr, softmax

from drdpo.core import RewardTable, TabularPolicy, check_beta
from drdpo.divergence import DiscreteDistribution, as_distribution, phi_derivative
from drdpo.errors import ConfigError, ConvergenceError, DomainError, RangeError, ShapeError
from drdpo.schemas import BoundInputs, BoundReport, PhiFamily

logger = logging.getLogger(__name__)

GRID_STEP = 1e-3
ZOOM_ROUNDS = 10
ZOOM_POINTS = 21


class WeightVector(BaseModel):
    """Per-pair worst-case weights, aligned to dataset order, with mean 1."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: np.ndarray

    @field_validator("weights", mode="before")
    @classmethod
    def _normalized(cls, value: Any) -> np.ndarray:
        weights = np.array(value, dtype=np.float64)
        if weights.ndim != 1 or weights.size == 0:
            raise ShapeError("weights form a non-empty vector")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise DomainError("weights must be finite and non-negative")
        if abs(weights.mean() - 1.0) > 1e-9:
            raise DomainError(f"weights average {weights.mean()!r}, not 1")
        weights.setflags(write=False)
        return weights

    def __len__(self) -> int:
        return self.weights.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightVector):
            return NotImplemented
        return bool(np.array_equal(self.weights, other.weights))

    __hash__ = None  # type: ignore[assignment]


def _as_vector(values: ArrayLike, what: str = "h") -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64).ravel()
    if vec.size == 0:
        raise ConfigError(f"{what} is empty")
    if not np.all(np.isfinite(vec)):
        raise DomainError(f"{what} has non-finite entries")
    return vec


def _positive_base(base: Union[DiscreteDistribution, ArrayLike], size: int) -> np.ndarray:
    probs = as_distribution(base).probs
    if probs.size != size:
        raise ShapeError(f"base has {probs.size} atoms, values have {size}")
    if np.any(probs <= 0):
        raise DomainError("base distribution must be strictly positive")
    return probs


def gibbs_weights(h_values: ArrayLike, beta_prime: float) -> WeightVector:
    """w_i = exp(h_i / beta') / mean_j exp(h_j / beta')."""
    check_beta(beta_prime, "beta_prime")
    h = _as_vector(h_values)
    tilted = np.exp((h - h.max()) / beta_prime)
    return WeightVector(weights=tilted / tilted.mean())


def gibbs_weight_stats(weights: WeightVector) -> Tuple[float, float, float]:
    w = weights.weights
    return float(w.min()), float(w.max()), float(w.mean())


def worst_case_distribution(
    h_values: ArrayLike, beta_prime: float, base: Union[DiscreteDistribution, ArrayLike]
) -> DiscreteDistribution:
    """q*_i ~ base_i exp(h_i / beta'), the maximizer of penalized_objective."""
    check_beta(beta_prime, "beta_prime")
    h = _as_vector(h_values)
    probs = _positive_base(base, h.size)
    return DiscreteDistribution(probs=softmax(np.log(probs) + h / beta_prime))


def penalized_objective(
    q: Union[DiscreteDistribution, ArrayLike],
    h_values: ArrayLike,
    beta_prime: float,
    base: Union[DiscreteDistribution, ArrayLike],
) -> float:
    """E_q[h] - beta' KL(q || base)."""
    check_beta(beta_prime, "beta_prime")
    h = _as_vector(h_values)
    probs = _positive_base(base, h.size)
    qs = as_distribution(q).probs
    if qs.size != h.size:
        raise ShapeError(f"q has {qs.size} atoms, h has {h.size}")
    return float(qs @ h - beta_prime * np.sum(rel_entr(qs, probs)))


def closed_form_optimum(
    h_values: ArrayLike, beta_prime: float, base: Union[DiscreteDistribution, ArrayLike]
) -> float:
    """beta' log E_base[exp(h / beta')], the value of penalized_objective at q*."""
    check_beta(beta_prime, "beta_prime")
    h = _as_vector(h_values)
    probs = _positive_base(base, h.size)
    return float(beta_prime * logsumexp(h / beta_prime, b=probs))


def _batch_objective(qs: np.ndarray, h: np.ndarray, beta_prime: float, base: np.ndarray) -> np.ndarray:
    return qs @ h - beta_prime * np.sum(rel_entr(qs, base), axis=1)


def _complete(free: np.ndarray) -> np.ndarray:
    """Append the last coordinate 1 - sum(free) and drop points off the simplex."""
    last = 1.0 - free.sum(axis=1, keepdims=True)
    qs = np.hstack([free, last])
    return qs[np.all(qs >= 0.0, axis=1)]


def _grid_search(h: np.ndarray, beta_prime: float, base: np.ndarray) -> np.ndarray:
    """Exhaustive simplex grid, then repeated zooms around the incumbent."""
    dims = h.size - 1
    axis = np.arange(0.0, 1.0 + GRID_STEP / 2, GRID_STEP)
    free = np.stack(np.meshgrid(*([axis] * dims), indexing="ij"), axis=-1).reshape(-1, dims)
    qs = _complete(free)
    best = qs[np.argmax(_batch_objective(qs, h, beta_prime, base))]
    step = GRID_STEP
    for _ in range(ZOOM_ROUNDS):
        offsets = np.linspace(-step, step, ZOOM_POINTS)
        local = np.stack(np.meshgrid(*([offsets] * dims), indexing="ij"), axis=-1).reshape(-1, dims)
        qs = _complete(np.clip(best[:dims] + local, 0.0, 1.0))
        best = qs[np.argmax(_batch_objective(qs, h, beta_prime, base))]
        step /= (ZOOM_POINTS - 1) / 2
    return best


def _mirror_ascent(
    h: np.ndarray, beta_prime: float, base: np.ndarray, iterations: int, rng: np.random.Generator
) -> np.ndarray:
    """Entropic (exponentiated-gradient) ascent from a random interior point."""
    log_q = np.log(rng.dirichlet(np.ones(h.size)))
    log_base = np.log(base)
    lr = 0.5 / beta_prime
    for it in range(iterations):
        grad = h - beta_prime * (log_q - log_base + 1.0)
        step = log_q + lr * grad
        step -= logsumexp(step)
        moved = float(np.max(np.abs(step - log_q)))
        log_q = step
        if moved < 1e-13:
            logger.debug(f"mirror ascent settled after {it + 1} iterations")
            break
    return np.exp(log_q)


def simplex_search_oracle(
    h_values: ArrayLike,
    beta_prime: float,
    base: Union[DiscreteDistribution, ArrayLike],
    iterations: int = 10_000,
    rng: Optional[np.random.Generator] = None,
    tol: float = 1e-6,
) -> DiscreteDistribution:
    """Maximize penalized_objective without using the Gibbs form.

    Length <= 3 uses an exhaustive simplex grid (step 1e-3) refined by
    zooming; longer vectors use mirror ascent from a random start drawn
    from ``rng``.

    Raises:
        ConvergenceError: the best iterate is further than ``tol`` from the
            closed-form optimum; the error carries the iterate and the gap.
    """
    check_beta(beta_prime, "beta_prime")
    h = _as_vector(h_values)
    probs = _positive_base(base, h.size)
    if h.size == 1:
        return DiscreteDistribution(probs=[1.0])
    if h.size <= 3:
        best = _grid_search(h, beta_prime, probs)
    else:
        best = _mirror_ascent(h, beta_prime, probs, iterations, rng or np.random.default_rng(0))
    best = best / best.sum()
    found = DiscreteDistribution(probs=best)
    gap = closed_form_optimum(h, beta_prime, probs) - penalized_objective(found, h, beta_prime, probs)
    if gap > tol:
        raise ConvergenceError(f"simplex search stopped {gap:.3e} below the optimum", found, gap)
    return found


def optimal_alpha(
    reward_values: ArrayLike, ref_probs: Union[DiscreteDistribution, ArrayLike], beta: float
) -> float:
    """alpha* = -beta log E_ref[exp(r / beta)]."""
    check_beta(beta)
    r = _as_vector(reward_values, "reward")
    probs = as_distribution(ref_probs).probs
    if probs.size != r.size:
        raise ShapeError(f"reference has {probs.size} atoms, reward has {r.size}")
    return float(-beta * logsumexp(r / beta, b=probs))


def optimal_likelihood_ratio(
    reward_values: ArrayLike, ref_probs: Union[DiscreteDistribution, ArrayLike], beta: float
) -> np.ndarray:
    """L* = exp(r / beta) / E_ref[exp(r / beta)], so that E_ref[L*] = 1."""
    alpha = optimal_alpha(reward_values, ref_probs, beta)
    r = _as_vector(reward_values, "reward")
    return np.exp((r + alpha) / beta)


def joint_reference_distribution(reference: TabularPolicy) -> DiscreteDistribution:
    """pi_ref(y|x) / num_prompts over all (x, y): uniform prompts, joint expectation."""
    joint = reference.probs.ravel() / reference.space.num_prompts
    return DiscreteDistribution(probs=joint / joint.sum())


def optimal_reward_general_phi(family: PhiFamily, ratio: float, beta: float) -> float:
    """beta * phi'(pi / pi_ref); the normalizing shift is left out."""
    check_beta(beta)
    if not ratio > 0:
        raise DomainError(f"likelihood ratio must be positive, got {ratio}")
    return float(beta * phi_derivative(family, ratio))


def beta_star(eta: float, reward_variance: float) -> float:
    """sqrt(V / (2 eta)): the regularization strength implied by radius eta."""
    if not eta > 0:
        raise ConfigError(f"robustness radius eta must be positive, got {eta}")
    if reward_variance < 0:
        raise DomainError(f"variance must be non-negative, got {reward_variance}")
    return math.sqrt(reward_variance / (2.0 * eta))


def reward_variance_under_ref(reward: RewardTable, ref: TabularPolicy, prompt: int) -> float:
    if reward.space != ref.space:
        raise ShapeError(f"reward space {reward.space.shape} != reference {ref.space.shape}")
    if not 0 <= prompt < ref.space.num_prompts:
        raise RangeError(f"prompt {prompt} outside {ref.space.num_prompts} prompts")
    p, r = ref.probs[prompt], reward.values[prompt]
    mean = p @ r
    return float(p @ (r - mean) ** 2)


def rm_dro_dual(
    beta: float,
    eta: float,
    reward_values: ArrayLike,
    ref_probs: Union[DiscreteDistribution, ArrayLike],
) -> float:
    """beta eta + beta log E_ref[exp(r / beta)], the alpha-eliminated KL dual."""
    return float(beta * eta - optimal_alpha(reward_values, ref_probs, beta))


def solve_beta_star(
    eta: float,
    reward_values: ArrayLike,
    ref_probs: Union[DiscreteDistribution, ArrayLike],
    bounds: Tuple[float, float] = (1e-8, 1e6),
) -> float:
    """Minimize rm_dro_dual over beta numerically (in log beta)."""
    if not eta > 0:
        raise ConfigError(f"robustness radius eta must be positive, got {eta}")
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    result = minimize_scalar(
        lambda log_beta: rm_dro_dual(math.exp(log_beta), eta, reward_values, ref_probs),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    if not result.success:
        raise ConvergenceError(f"dual minimization failed: {result.message}", math.exp(result.x))
    return float(math.exp(result.x))


def generalization_bound(inputs: BoundInputs) -> float:
    """2b e^c / (N - 1 + e^c) * sqrt(N/2 ln(1/delta)),  c = (b - a) / beta'.

    The ratio is evaluated as 1 / ((N - 1) e^-c + 1) so small beta' cannot
    overflow.

    Raises:
        ConfigError: delta outside (0, 1), n < 1, beta' <= 0 or a > b.
    """
    inputs.check()
    c = (inputs.b - inputs.a) / inputs.beta_prime
    ratio = 1.0 / ((inputs.n - 1) * math.exp(-c) + 1.0)
    return 2.0 * inputs.b * ratio * math.sqrt(inputs.n / 2.0 * math.log(1.0 / inputs.delta))


def estimate_bound_range(h_values: ArrayLike, floor: float) -> Tuple[float, float]:
    """[a, b] for generalization_bound: (max(min h, floor), 0).

    h_DPO is unbounded below, so the lower end is clamped explicitly.
    """
    h = _as_vector(h_values)
    lowest = float(h.min())
    if lowest < floor:
        logger.warning(f"min h_DPO {lowest:.3f} clamped to floor {floor}")
    return max(lowest, floor), 0.0


def bound_report(h_values: ArrayLike, beta_prime: float, delta: float, floor: float) -> BoundReport:
    """generalization_bound for the pairs behind ``h_values``.

    The bounded quantity is the per-pair loss -h, which lies in [-b, -a]
    for the clamped h range [a, b] = estimate_bound_range(h, floor).
    """
    h = _as_vector(h_values)
    low, high = estimate_bound_range(h, floor)
    inputs = BoundInputs(delta=delta, n=h.size, beta_prime=beta_prime, a=-high, b=-low)
    value = generalization_bound(inputs)
    logger.debug(f"bound over {h.size} pairs with h in [{low:.3f}, {high}]: {value:.4g}")
    return BoundReport(h_min=low, h_max=high, delta=delta, n=h.size, beta_prime=beta_prime, value=value)
