"""
Analytic gradients of the preference losses with respect to tabular logits

Within one prompt the softmax normalizer cancels between y_w and y_l, so

    d delta_i / d logits[x_i, :] = e_{y_w} - e_{y_l}

and every loss gradient is (1/N) sum_i c_i (e_{y_w} - e_{y_l}) placed on row x_i,
where c_i is the derivative of pair i's loss with respect to its margin.
Under a phi generator other than KL the margin is phi'(L_w) - phi'(L_l) with
s = ln L the log-ratio, and with psi = dphi'(e^s)/ds the row becomes

    psi_w e_{y_w} - psi_l e_{y_l} - (psi_w - psi_l) pi(.|x_i).

Rows therefore sum to zero in both cases.
"""

from typing import Any, Callable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.special import expit

from drdpo.core import (
    PreferenceDataset,
    TabularPolicy,
    check_beta,
    pair_log_ratios,
)
from drdpo.divergence import KL, phi_elasticity_log
from drdpo.dro import gibbs_weights
from drdpo.errors import ConfigError, NonFiniteLossError, ShapeError
from drdpo.losses import h_values, pair_margins
from drdpo.schemas import LossKind, LossSpec, PhiFamily

LossEvaluator = Callable[[TabularPolicy], float]
Slopes = Optional[Tuple[np.ndarray, np.ndarray]]


class GradientTable(BaseModel):
    """d loss / d logits, same shape as the policy table."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _finite_matrix(cls, value: Any) -> np.ndarray:
        values = np.array(value, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"gradient must be a matrix, got {values.ndim} dims")
        if not np.all(np.isfinite(values)):
            raise NonFiniteLossError("gradient", float(values[~np.isfinite(values)][0]))
        values.setflags(write=False)
        return values

    @property
    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GradientTable):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    __hash__ = None  # type: ignore[assignment]


def _scatter(
    policy: TabularPolicy, dataset: PreferenceDataset, coeffs: np.ndarray, slopes: Slopes = None
) -> GradientTable:
    """Mean over pairs of c_i (e_w - e_l), accumulated sequentially in dataset order."""
    grad = np.zeros(policy.space.shape)
    cols = dataset.columns
    if slopes is None:
        np.add.at(grad, (cols.prompts, cols.chosen), coeffs)
        np.add.at(grad, (cols.prompts, cols.rejected), -coeffs)
    else:
        chosen, rejected = slopes
        np.add.at(grad, (cols.prompts, cols.chosen), coeffs * chosen)
        np.add.at(grad, (cols.prompts, cols.rejected), -coeffs * rejected)
        rows = np.zeros(policy.space.num_prompts)
        np.add.at(rows, cols.prompts, coeffs * (chosen - rejected))
        grad -= rows[:, None] * policy.probs
    return GradientTable(values=grad / len(dataset))


def _margins(
    policy: TabularPolicy, reference: TabularPolicy, dataset: PreferenceDataset, phi: PhiFamily = KL
) -> Tuple[np.ndarray, Slopes]:
    """Pair margins, plus the (psi_w, psi_l) slopes when phi is not KL."""
    if len(dataset) == 0:
        raise ConfigError("gradient over an empty preference dataset")
    margins = pair_margins(policy, reference, dataset, phi)
    if phi.kind == "kl":
        return margins, None
    chosen, rejected = pair_log_ratios(policy, reference, dataset)
    return margins, (
        np.asarray(phi_elasticity_log(phi, chosen)),
        np.asarray(phi_elasticity_log(phi, rejected)),
    )


def _dpo_coefficients(margins: np.ndarray, beta: float) -> np.ndarray:
    return -beta * expit(-beta * margins)


def grad_dpo(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    beta: float,
    phi: PhiFamily = KL,
) -> GradientTable:
    check_beta(beta)
    margins, slopes = _margins(policy, reference, dataset, phi)
    return _scatter(policy, dataset, _dpo_coefficients(margins, beta), slopes)


def grad_dr_dpo(
    policy: TabularPolicy,
    reference: TabularPolicy,
    dataset: PreferenceDataset,
    beta: float,
    beta_prime: float,
    phi: PhiFamily = KL,
) -> GradientTable:
    """DPO pair contributions reweighted by gibbs_weights(h, beta')."""
    check_beta(beta)
    margins, slopes = _margins(policy, reference, dataset, phi)
    weights = gibbs_weights(h_values(policy, reference, dataset, beta, phi), beta_prime).weights
    return _scatter(policy, dataset, weights * _dpo_coefficients(margins, beta), slopes)


def grad_baselines(
    policy: TabularPolicy, reference: TabularPolicy, dataset: PreferenceDataset, spec: LossSpec
) -> GradientTable:
    margins, slopes = _margins(policy, reference, dataset, spec.phi)
    if spec.kind is LossKind.IPO:
        return _scatter(policy, dataset, 2.0 * (margins - 1.0 / (2.0 * spec.tau)), slopes)
    u = spec.beta * margins
    eps = spec.epsilon
    if spec.kind is LossKind.CDPO:
        coeffs = spec.beta * (-(1.0 - eps) * expit(-u) + eps * expit(u))
    elif spec.kind is LossKind.RDPO:
        coeffs = spec.beta * (-(1.0 - eps) * expit(-u) - eps * expit(u)) / (1.0 - 2.0 * eps)
    else:
        raise ConfigError(f"grad_baselines covers cdpo, ipo and rdpo, not {spec.kind.value}")
    return _scatter(policy, dataset, coeffs, slopes)


def grad_loss(
    policy: TabularPolicy, reference: TabularPolicy, dataset: PreferenceDataset, spec: LossSpec
) -> GradientTable:
    if spec.kind is LossKind.DPO:
        return grad_dpo(policy, reference, dataset, spec.beta, spec.phi)
    if spec.kind is LossKind.DRDPO:
        return grad_dr_dpo(policy, reference, dataset, spec.beta, spec.beta_prime, spec.phi)
    return grad_baselines(policy, reference, dataset, spec)


def dpo_pair_gradients(
    policy: TabularPolicy, reference: TabularPolicy, dataset: PreferenceDataset, beta: float
) -> np.ndarray:
    """Un-averaged DPO contribution g_i of every pair, shape (N, prompts, completions)."""
    check_beta(beta)
    margins, _ = _margins(policy, reference, dataset)
    coeffs = _dpo_coefficients(margins, beta)
    cols = dataset.columns
    rows = np.arange(len(dataset))
    out = np.zeros((len(dataset),) + policy.space.shape)
    out[rows, cols.prompts, cols.chosen] += coeffs
    out[rows, cols.prompts, cols.rejected] -= coeffs
    return out


def finite_diff(loss_evaluator: LossEvaluator, policy: TabularPolicy, step: float = 1e-5) -> GradientTable:
    """Central differences (f(theta + h e) - f(theta - h e)) / 2h, one logit at a time.

    Raises:
        NonFiniteLossError: an evaluation came out to nan/inf; ``where`` is the
            (prompt, completion) coordinate.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ConfigError(f"finite-difference step must lie in [1e-7, 1e-3], got {step}")
    base = np.array(policy.logits)
    grad = np.zeros_like(base)
    for coord in np.ndindex(base.shape):
        values = []
        for sign in (1.0, -1.0):
            shifted = base.copy()
            shifted[coord] += sign * step
            value = loss_evaluator(TabularPolicy(logits=shifted, space=policy.space))
            if not np.isfinite(value):
                raise NonFiniteLossError(coord, value)
            values.append(value)
        grad[coord] = (values[0] - values[1]) / (2.0 * step)
    return GradientTable(values=grad)


def relative_error(
    analytic: Union[GradientTable, np.ndarray], numeric: Union[GradientTable, np.ndarray]
) -> float:
    """||a - b||_inf / max(1, ||a||_inf)."""
    a = analytic.values if isinstance(analytic, GradientTable) else np.asarray(analytic)
    b = numeric.values if isinstance(numeric, GradientTable) else np.asarray(numeric)
    if a.shape != b.shape:
        raise ShapeError(f"gradient shapes differ: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(a)))))
