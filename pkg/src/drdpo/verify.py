"""
Self-check suite: every closed form against an independent oracle

Each check draws its random instances from the ``verify`` stream of one seed
and reports the worst measured error next to its tolerance.
"""

import logging
import math
from typing import Callable, List, NamedTuple, Tuple

import numpy as np
from pydantic import BaseModel

from drdpo.core import PreferenceDataset, TabularPolicy
from drdpo.divergence import (
    conjugate_domain_upper,
    conjugate_sup_oracle,
    phi_conjugate,
    phi_derivative,
    phi_derivative_log,
    phi_value,
)
from drdpo.dro import (
    beta_star,
    closed_form_optimum,
    generalization_bound,
    gibbs_weights,
    optimal_likelihood_ratio,
    penalized_objective,
    simplex_search_oracle,
    solve_beta_star,
    worst_case_distribution,
)
from drdpo.errors import ConfigError
from drdpo.grad import finite_diff, grad_dpo, grad_dr_dpo, grad_loss, relative_error
from drdpo.losses import dpo_loss, dr_dpo_loss, evaluate_loss, log_sigmoid
from drdpo.schemas import BoundInputs, GridSpec, LossKind, LossSpec, PhiFamily, PromptSpace
from drdpo.synth import stream

logger = logging.getLogger(__name__)

BETA_PRIME_LADDER = (0.01, 0.1, 1.0, 10.0, 100.0)
PHI_FAMILIES = (PhiFamily(kind="kl"), PhiFamily(kind="jsd"), PhiFamily(kind="alpha", alpha=0.5))


class CheckResult(BaseModel):
    name: str
    error: float
    tolerance: float
    passed: bool
    detail: str = ""


class VerifyContext(NamedTuple):
    rng: np.random.Generator
    tolerance_scale: float
    perturbation: float


def _result(ctx: VerifyContext, name: str, error: float, tolerance: float, detail: str = "") -> CheckResult:
    tol = tolerance * ctx.tolerance_scale
    passed = bool(np.isfinite(error) and error <= tol)
    return CheckResult(name=name, error=float(error), tolerance=tol, passed=passed, detail=detail)


def random_instance(
    rng: np.random.Generator, max_prompts: int = 4, max_completions: int = 5, max_pairs: int = 30
) -> Tuple[TabularPolicy, TabularPolicy, PreferenceDataset, float]:
    """Random (policy, reference, dataset, beta) with standard-normal logits."""
    space = PromptSpace(
        num_prompts=int(rng.integers(1, max_prompts + 1)),
        completions_per_prompt=int(rng.integers(2, max_completions + 1)),
    )
    n = int(rng.integers(2, max_pairs + 1))
    prompts = rng.integers(0, space.num_prompts, size=n)
    chosen = rng.integers(0, space.completions_per_prompt, size=n)
    rejected = rng.integers(0, space.completions_per_prompt - 1, size=n)
    rejected += rejected >= chosen
    dataset = PreferenceDataset.from_columns(space, prompts, chosen, rejected, np.zeros(n, dtype=bool))
    policy = TabularPolicy(logits=rng.normal(size=space.shape), space=space)
    reference = TabularPolicy(logits=rng.normal(size=space.shape), space=space)
    beta = float(math.exp(rng.uniform(math.log(0.05), math.log(2.0))))
    return policy, reference, dataset, beta


def _random_h(rng: np.random.Generator, size: int) -> np.ndarray:
    return log_sigmoid(rng.normal(0.0, 2.0, size=size))


def check_toy_weights(ctx: VerifyContext) -> List[CheckResult]:
    h = np.array([-0.1, -1.0])
    w = gibbs_weights(h, 0.1).weights
    weighted = float(w @ h)
    return [
        _result(ctx, "toy-weight-high", abs(w[0] - 2.0), 2e-3, f"w={np.round(w, 6).tolist()}"),
        _result(ctx, "toy-weight-low", w[1], 1e-3),
        _result(ctx, "toy-weighted-sum", abs(weighted + 0.2), 1e-3, f"sum={weighted:.6f}"),
    ]


def check_gibbs_vs_oracle(ctx: VerifyContext, instances: int = 50) -> List[CheckResult]:
    shortfall, identity = 0.0, 0.0
    for _ in range(instances):
        size = int(ctx.rng.integers(2, 6))
        h = _random_h(ctx.rng, size)
        beta_prime = float(math.exp(ctx.rng.uniform(math.log(0.1), math.log(10.0))))
        base = ctx.rng.dirichlet(np.ones(size))
        q_star = worst_case_distribution(h, beta_prime, base)
        oracle = simplex_search_oracle(h, beta_prime, base, rng=ctx.rng, tol=math.inf)
        value = penalized_objective(q_star, h, beta_prime, base)
        shortfall = max(shortfall, penalized_objective(oracle, h, beta_prime, base) - value)
        identity = max(identity, abs(value - closed_form_optimum(h, beta_prime, base)))
    return [
        _result(ctx, "gibbs-vs-oracle", shortfall, 1e-6, f"{instances} instances"),
        _result(ctx, "closed-form-optimum", identity, 1e-10),
    ]


def check_dpo_recovery(ctx: VerifyContext, instances: int = 20) -> List[CheckResult]:
    loss_gap, grad_gap = 0.0, 0.0
    for _ in range(instances):
        policy, reference, dataset, beta = random_instance(ctx.rng)
        loss_gap = max(
            loss_gap,
            abs(dr_dpo_loss(policy, reference, dataset, beta, 1e8) - dpo_loss(policy, reference, dataset, beta)),
        )
        diff = grad_dr_dpo(policy, reference, dataset, beta, 1e8).values - grad_dpo(policy, reference, dataset, beta).values
        grad_gap = max(grad_gap, float(np.max(np.abs(diff))))
    return [
        _result(ctx, "dpo-recovery-loss", loss_gap, 1e-5, "beta'=1e8"),
        _result(ctx, "dpo-recovery-grad", grad_gap, 1e-6, "beta'=1e8"),
    ]


def _random_loss(rng: np.random.Generator, kind: LossKind, beta: float) -> LossSpec:
    return LossSpec(
        kind=kind,
        beta=beta,
        beta_prime=float(math.exp(rng.uniform(math.log(0.1), math.log(10.0)))),
        epsilon=float(rng.uniform(0.0, 0.45)),
        tau=float(rng.uniform(0.05, 1.0)),
    )


def check_fd_gradients(ctx: VerifyContext, instances: int = 100) -> List[CheckResult]:
    kinds = list(LossKind)
    worst, worst_kind = 0.0, ""
    for i in range(instances):
        policy, reference, dataset, beta = random_instance(ctx.rng)
        spec = _random_loss(ctx.rng, kinds[i % len(kinds)], beta)
        analytic = grad_loss(policy, reference, dataset, spec).values + ctx.perturbation
        numeric = finite_diff(lambda p: evaluate_loss(p, reference, dataset, spec), policy)
        err = relative_error(analytic, numeric)
        if err > worst:
            worst, worst_kind = err, spec.kind.value
    return [_result(ctx, "fd-gradients", worst, 1e-5, f"{instances} instances, worst {worst_kind or '-'}")]


def check_tilted_ordering(ctx: VerifyContext, instances: int = 50) -> List[CheckResult]:
    jensen, monotone = 0.0, 0.0
    for _ in range(instances):
        policy, reference, dataset, beta = random_instance(ctx.rng)
        dpo = dpo_loss(policy, reference, dataset, beta)
        ladder = [dr_dpo_loss(policy, reference, dataset, beta, bp) for bp in BETA_PRIME_LADDER]
        jensen = max(jensen, max(v - dpo for v in ladder))
        monotone = max(monotone, max(a - b for a, b in zip(ladder, ladder[1:])))
    return [
        _result(ctx, "jensen-order", max(jensen, 0.0), 1e-10, "dr_dpo <= dpo"),
        _result(ctx, "beta-prime-monotone", max(monotone, 0.0), 1e-10, f"beta' in {BETA_PRIME_LADDER}"),
    ]


def check_beta_star(ctx: VerifyContext) -> List[CheckResult]:
    variances = (1e-3, 0.1, 1.0, 10.0, 100.0)
    etas = (1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0)
    identity, increases = 0.0, 0
    for v in variances:
        ladder = [beta_star(eta, v) for eta in etas]
        identity = max(identity, max(abs(b * b * 2.0 * eta - v) for b, eta in zip(ladder, etas)))
        increases += sum(1 for a, b in zip(ladder, ladder[1:]) if not b < a)

    rewards = ctx.rng.uniform(-1.0, 1.0, size=8)
    ref = ctx.rng.dirichlet(np.ones(8))
    variance = float(ref @ (rewards - ref @ rewards) ** 2)
    eta = 1e-6
    numeric = solve_beta_star(eta, rewards, ref)
    approx = beta_star(eta, variance)
    return [
        _result(ctx, "beta-star-identity", identity, 1e-12),
        _result(ctx, "beta-star-monotone", float(increases), 0.0, "strictly decreasing in eta"),
        _result(
            ctx,
            "beta-star-dual",
            abs(numeric - approx) / approx,
            1e-2,
            f"eta={eta}: dual {numeric:.4f} vs sqrt(V/2eta) {approx:.4f}",
        ),
    ]


def _printed_bound(delta: float, n: int, beta_prime: float, a: float, b: float) -> float:
    e = math.exp((b - a) / beta_prime)
    return 2.0 * b * e / (n - 1 + e) * math.sqrt(n / 2.0 * math.log(1.0 / delta))


def check_bound(ctx: VerifyContext, instances: int = 100) -> List[CheckResult]:
    formula = 0.0
    for _ in range(instances):
        a = float(ctx.rng.uniform(-2.0, 0.0))
        b = float(ctx.rng.uniform(a, 1.0))
        inputs = BoundInputs(
            delta=float(ctx.rng.uniform(0.01, 0.5)),
            n=int(ctx.rng.integers(1, 10_000)),
            beta_prime=float(ctx.rng.uniform(0.5, 10.0)),
            a=a,
            b=b,
        )
        expected = _printed_bound(inputs.delta, inputs.n, inputs.beta_prime, inputs.a, inputs.b)
        formula = max(formula, abs(generalization_bound(inputs) - expected) / max(1.0, abs(expected)))

    def bound(n: int, beta_prime: float = 1.0) -> float:
        return generalization_bound(BoundInputs(delta=0.05, n=n, beta_prime=beta_prime, a=0.0, b=1.0))

    decay = bound(10**6) / bound(10**2)
    ladder = [bound(1000, bp) for bp in (10.0, 3.0, 1.0, 0.3, 0.1)]
    drops = sum(1 for lo, hi in zip(ladder, ladder[1:]) if not hi > lo)
    return [
        _result(ctx, "bound-formula", formula, 1e-12, f"{instances} inputs"),
        # B ~ N^-1/2 once N dominates e^c; the ratio is 0.01017 at these inputs
        _result(ctx, "bound-decay", decay, 1.05e-2, "B(N=1e6) / B(N=1e2)"),
        _result(ctx, "bound-beta-prime", float(drops), 0.0, "B grows as beta' shrinks"),
    ]


def check_conjugates(ctx: VerifyContext, samples: int = 10_000) -> List[CheckResult]:
    kl = PHI_FAMILIES[0]
    grid = GridSpec(t_max=200.0, spacing="log")
    oracle = max(
        abs(phi_conjugate(kl, s) - conjugate_sup_oracle(kl, s, grid)) for s in np.linspace(-5.0, 5.0, 41)
    )
    violation, equality = 0.0, 0.0
    for family in PHI_FAMILIES:
        upper = min(5.0, conjugate_domain_upper(family) - 0.05)
        s = ctx.rng.uniform(-5.0, upper, size=samples)
        t = ctx.rng.uniform(1e-3, 10.0, size=samples)
        gap = phi_value(family, t) + phi_conjugate(family, s) - s * t
        violation = max(violation, float(np.max(-gap)))
        slope = phi_derivative(family, t)
        tight = phi_value(family, t) + phi_conjugate(family, slope) - slope * t
        equality = max(equality, float(np.max(np.abs(tight) / np.maximum(1.0, np.abs(slope * t)))))
    return [
        _result(ctx, "kl-conjugate", oracle, 1e-4, "s in [-5, 5], t <= 200"),
        _result(ctx, "fenchel-young", max(violation, 0.0), 1e-9, f"{samples} (s, t) per family"),
        _result(ctx, "fenchel-young-equality", equality, 1e-9, "s = phi'(t)"),
    ]


def check_likelihood_ratio(ctx: VerifyContext, instances: int = 20) -> List[CheckResult]:
    worst = 0.0
    for _ in range(instances):
        size = int(ctx.rng.integers(2, 10))
        ref = ctx.rng.dirichlet(np.ones(size))
        ratio = optimal_likelihood_ratio(ctx.rng.normal(0.0, 2.0, size), ref, float(ctx.rng.uniform(0.05, 2.0)))
        worst = max(worst, abs(float(ref @ ratio) - 1.0))
    return [_result(ctx, "likelihood-ratio-normalized", worst, 1e-12, "E_ref[L*] = 1")]


def _random_phi(rng: np.random.Generator) -> PhiFamily:
    kind = ("kl", "jsd", "alpha")[int(rng.integers(0, 3))]
    if kind == "alpha":
        return PhiFamily(kind="alpha", alpha=round(float(rng.uniform(0.3, 0.7)), 3))
    return PhiFamily(kind=kind)


def check_phi_gradients(ctx: VerifyContext, instances: int = 60) -> List[CheckResult]:
    """phi-reward losses: log-space phi' against phi'(e^s), analytic gradients against FD."""
    identity = 0.0
    for family in PHI_FAMILIES:
        s = ctx.rng.normal(0.0, 3.0, size=50)
        direct = np.asarray(phi_derivative(family, np.exp(s)))
        identity = max(identity, float(np.max(np.abs(np.asarray(phi_derivative_log(family, s)) - direct))))

    kinds = list(LossKind)
    worst, worst_case = 0.0, ""
    for i in range(instances):
        policy, reference, dataset, beta = random_instance(ctx.rng)
        spec = _random_loss(ctx.rng, kinds[i % len(kinds)], beta).model_copy(
            update={"phi": _random_phi(ctx.rng)}
        )
        analytic = grad_loss(policy, reference, dataset, spec).values + ctx.perturbation
        numeric = finite_diff(lambda p: evaluate_loss(p, reference, dataset, spec), policy)
        err = relative_error(analytic, numeric)
        if err > worst:
            worst, worst_case = err, f"{spec.kind.value}/{spec.phi}"
    return [
        _result(ctx, "phi-log-derivative", identity, 1e-9, ", ".join(str(f) for f in PHI_FAMILIES)),
        _result(ctx, "phi-fd-gradients", worst, 1e-5, f"{instances} instances, worst {worst_case or '-'}"),
    ]


CHECKS: Tuple[Tuple[str, Callable[[VerifyContext], List[CheckResult]]], ...] = (
    ("toy example", check_toy_weights),
    ("worst-case distribution", check_gibbs_vs_oracle),
    ("DPO limit", check_dpo_recovery),
    ("gradients", check_fd_gradients),
    ("tilted ordering", check_tilted_ordering),
    ("regularization strength", check_beta_star),
    ("generalization bound", check_bound),
    ("conjugate duality", check_conjugates),
    ("likelihood ratio", check_likelihood_ratio),
    ("phi rewards", check_phi_gradients),
)


def run_checks(seed: int = 0, tolerance_scale: float = 1.0, perturbation: float = 0.0) -> List[CheckResult]:
    """
    Run the whole suite.

    Args:
        seed: Seed of the ``verify`` stream.
        tolerance_scale: Multiplier applied to every tolerance.
        perturbation: Added to every analytic gradient entry before the
            finite-difference comparison; nonzero values must fail.

    Returns:
        One CheckResult per measured quantity, in suite order.
    """
    if not tolerance_scale > 0:
        raise ConfigError(f"tolerance scale must be positive, got {tolerance_scale}")
    ctx = VerifyContext(stream(seed, "verify"), tolerance_scale, perturbation)
    results: List[CheckResult] = []
    for group, check in CHECKS:
        logger.debug(f"running {group} checks")
        results.extend(check(ctx))
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning(f"{len(failed)} check(s) failed: {', '.join(failed)}")
    return results
