"""
phi-divergences: generator, derivative, convex conjugate and D_phi(q, q0)

Supported generators (all convex with phi(1) = 0):

    KL      phi(t) = t ln t - t + 1
    JSD     phi(t) = t ln t - (1 + t) ln((1 + t) / 2)
    Alpha   phi(t) = (t^a - a t + a - 1) / (a (a - 1)),   0 < a < 1

phi(0) is the continuity limit of each family (1, ln 2 and 1/a).

The *_log helpers take s = ln t, the per-completion log-ratio ln pi - ln pi_ref,
so the phi-reward margins of a policy never exponentiate a log-probability.
"""

import logging
import math
from typing import Any, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.special import expit, xlogy

from drdpo.errors import ConfigError, DomainError, InfiniteDivergenceError, ShapeError
from drdpo.schemas import GridSpec, PhiFamily

logger = logging.getLogger(__name__)

Scalar = Union[float, np.ndarray]

SIMPLEX_ATOL = 1e-10

KL = PhiFamily(kind="kl")


class DiscreteDistribution(BaseModel):
    """Probability vector on a finite support."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    probs: np.ndarray

    @field_validator("probs", mode="before")
    @classmethod
    def _on_simplex(cls, value: Any) -> np.ndarray:
        probs = np.array(value, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ShapeError("a distribution is a non-empty vector")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise DomainError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > SIMPLEX_ATOL:
            raise DomainError(f"probabilities sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        return probs

    def __len__(self) -> int:
        return self.probs.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return bool(np.array_equal(self.probs, other.probs))

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def uniform(cls, size: int) -> "DiscreteDistribution":
        return cls(probs=np.full(size, 1.0 / size))


def as_distribution(value: Union[DiscreteDistribution, ArrayLike]) -> DiscreteDistribution:
    if isinstance(value, DiscreteDistribution):
        return value
    return DiscreteDistribution(probs=value)


def _scalar_or_array(result: np.ndarray, like: ArrayLike) -> Scalar:
    return float(result) if np.ndim(like) == 0 else result


def phi_value(family: PhiFamily, t: ArrayLike) -> Scalar:
    arr = np.asarray(t, dtype=np.float64)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError(f"phi is defined for t >= 0, got {t!r}")
    if family.kind == "kl":
        value = xlogy(arr, arr) - arr + 1.0
    elif family.kind == "jsd":
        value = xlogy(arr, arr) - xlogy(1.0 + arr, (1.0 + arr) / 2.0)
    else:
        a = family.alpha
        value = (np.power(arr, a) - a * arr + a - 1.0) / (a * (a - 1.0))
    return _scalar_or_array(value, t)


def phi_derivative(family: PhiFamily, t: ArrayLike) -> Scalar:
    arr = np.asarray(t, dtype=np.float64)
    if np.any(np.isnan(arr)) or np.any(arr <= 0):
        raise DomainError(f"phi' is defined for t > 0, got {t!r}")
    if family.kind == "kl":
        value = np.log(arr)
    elif family.kind == "jsd":
        value = math.log(2.0) + np.log(arr) - np.log1p(arr)
    else:
        a = family.alpha
        value = (np.power(arr, a - 1.0) - 1.0) / (a - 1.0)
    return _scalar_or_array(value, t)


def phi_derivative_log(family: PhiFamily, s: ArrayLike) -> Scalar:
    """phi'(e^s), evaluated from the log-ratio s without forming e^s."""
    arr = np.asarray(s, dtype=np.float64)
    if family.kind == "kl":
        value = arr.copy()
    elif family.kind == "jsd":
        # ln 2 + s - ln(1 + e^s) = ln 2 + log sigma(s)
        value = math.log(2.0) - np.logaddexp(0.0, -arr)
    else:
        a = family.alpha
        value = np.expm1((a - 1.0) * arr) / (a - 1.0)
    return _scalar_or_array(value, s)


def phi_elasticity_log(family: PhiFamily, s: ArrayLike) -> Scalar:
    """t phi''(t) at t = e^s, the derivative of phi_derivative_log in s."""
    arr = np.asarray(s, dtype=np.float64)
    if family.kind == "kl":
        value = np.ones_like(arr)
    elif family.kind == "jsd":
        value = expit(-arr)
    else:
        value = np.exp((family.alpha - 1.0) * arr)
    return _scalar_or_array(value, s)


def conjugate_domain_upper(family: PhiFamily) -> float:
    """Supremum of the conjugate's domain; phi* is finite strictly below it."""
    if family.kind == "kl":
        return math.inf
    if family.kind == "jsd":
        return math.log(2.0)
    return 1.0 / (1.0 - family.alpha)


def phi_conjugate(family: PhiFamily, s: ArrayLike) -> Scalar:
    """phi*(s) = sup_{t >= 0} s t - phi(t)."""
    arr = np.asarray(s, dtype=np.float64)
    upper = conjugate_domain_upper(family)
    if np.any(np.isnan(arr)) or np.any(arr >= upper):
        raise DomainError(f"phi* of {family} is finite only for s < {upper}, got {s!r}")
    if family.kind == "kl":
        value = np.expm1(arr)
    elif family.kind == "jsd":
        value = -np.log(2.0 - np.exp(arr))
    else:
        a = family.alpha
        u = 1.0 - (1.0 - a) * arr
        value = (np.power(u, a / (a - 1.0)) - 1.0) / a
    return _scalar_or_array(value, s)


def conjugate_sup_oracle(family: PhiFamily, s: float, t_grid: GridSpec = GridSpec()) -> float:
    """Brute-force max of s t - phi(t) over a grid; a lower bound on phi*(s)."""
    if t_grid.points < 1 or t_grid.t_max < t_grid.t_min:
        raise ConfigError(f"empty conjugate grid {t_grid}")
    if t_grid.spacing == "log":
        ts = np.geomspace(t_grid.t_min, t_grid.t_max, t_grid.points)
    else:
        ts = np.linspace(t_grid.t_min, t_grid.t_max, t_grid.points)
    values = s * ts - phi_value(family, ts)
    best = int(np.argmax(values))
    if best == ts.size - 1:
        logger.debug(f"sup of s*t - phi(t) for {family}, s={s} sits on the grid edge t={ts[-1]}")
    return float(values[best])


def phi_divergence(
    family: PhiFamily,
    q: Union[DiscreteDistribution, ArrayLike],
    q0: Union[DiscreteDistribution, ArrayLike],
) -> float:
    """D_phi(q, q0) = sum_i q0_i phi(q_i / q0_i)."""
    p, p0 = as_distribution(q).probs, as_distribution(q0).probs
    if p.shape != p0.shape:
        raise ShapeError(f"lengths differ: {p.size} vs {p0.size}")
    support = p0 > 0
    escaped = np.flatnonzero(~support & (p > 0))
    if escaped.size:
        raise InfiniteDivergenceError(int(escaped[0]))
    terms = p0[support] * phi_value(family, p[support] / p0[support])
    return max(float(np.sum(terms)), 0.0)
