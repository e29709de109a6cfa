"""
Tests for the self-check suite
"""

import math

import pytest

from drdpo.errors import ConfigError
from drdpo.synth import stream
from drdpo.verify import (
    CHECKS,
    VerifyContext,
    _result,
    check_fd_gradients,
    check_phi_gradients,
    check_toy_weights,
    random_instance,
    run_checks,
)


def _ctx(scale=1.0, perturbation=0.0, seed=0):
    return VerifyContext(stream(seed, "verify"), scale, perturbation)


@pytest.fixture(scope="module")
def results():
    return run_checks(seed=0)


def test_default_suite_passes(results):
    failed = [(r.name, r.error, r.tolerance) for r in results if not r.passed]

    assert failed == []


def test_suite_covers_every_group(results):
    names = [r.name for r in results]

    assert len(names) == len(set(names))
    for expected in (
        "toy-weight-high",
        "gibbs-vs-oracle",
        "dpo-recovery-grad",
        "fd-gradients",
        "jensen-order",
        "beta-star-identity",
        "bound-formula",
        "bound-decay",
        "kl-conjugate",
        "fenchel-young",
        "likelihood-ratio-normalized",
        "phi-log-derivative",
        "phi-fd-gradients",
    ):
        assert expected in names
    assert len(CHECKS) == 10


def test_toy_check_reports_weights():
    high, low, weighted = check_toy_weights(_ctx())

    assert high.passed and low.passed and weighted.passed
    assert high.detail.startswith("w=[1.99975")
    assert low.error <= 1e-3


def test_tolerance_scale_tightens_checks():
    """The toy weights sit 2.5e-4 from [2, 0]; a 1e-6 scale fails them"""
    results = check_toy_weights(_ctx(scale=1e-6))

    assert not results[0].passed
    assert results[0].tolerance == pytest.approx(2e-9)


def test_perturbed_gradient_fails():
    (result,) = check_fd_gradients(_ctx(perturbation=1e-3), instances=5)

    assert not result.passed
    assert result.error > 1e-4


def test_unperturbed_gradient_passes():
    (result,) = check_fd_gradients(_ctx(), instances=10)

    assert result.passed


def test_non_finite_error_fails():
    assert not _result(_ctx(), "nan", math.nan, 1.0).passed


def test_run_checks_rejects_bad_scale():
    with pytest.raises(ConfigError):
        run_checks(tolerance_scale=0.0)


def test_random_instance_shapes(rng):
    policy, reference, dataset, beta = random_instance(rng, max_prompts=2, max_completions=3, max_pairs=4)

    assert policy.space == reference.space == dataset.space
    assert policy.space.num_prompts <= 2 and policy.space.completions_per_prompt <= 3
    assert 2 <= len(dataset) <= 4
    assert 0.05 <= beta <= 2.0


def test_phi_gradient_check_passes_and_detects_perturbation():
    identity, gradients = check_phi_gradients(_ctx(seed=3), instances=10)
    _, perturbed = check_phi_gradients(_ctx(seed=3, perturbation=1e-3), instances=5)

    assert identity.passed and gradients.passed
    assert not perturbed.passed
