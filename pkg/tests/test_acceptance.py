"""
End-to-end experiments on the synthetic task

The full-size runs take a few minutes and run with --runslow; the smoke
version exercises the same pipeline on a small grid, and the hand-built
task shows the robustness gap on a policy that actually trains.
"""

import math

import pytest

from drdpo.analysis import best_beta_prime, drdpo_gap, kl_ratio, summarize
from drdpo.core import PreferenceDataset, PreferencePair, TabularPolicy
from drdpo.schemas import LossKind, LossSpec, PromptSpace, SweepSpec, TaskSpec, TrainConfig
from drdpo.sweep import run_sweep
from drdpo.train import train

SEEDS = list(range(10))

A, B, C, D = range(4)


def _noisy_spec(**overrides):
    fields = dict(
        betas=[0.1],
        beta_primes=[1.0],
        flip_rates=[0.4],
        pointwise_rhos=[0.0],
        losses=["dpo", "drdpo"],
        seeds=SEEDS,
        task=TaskSpec(space=PromptSpace(num_prompts=8, completions_per_prompt=8)),
        train=TrainConfig(learning_rate=0.05, steps=2000, batch_size=0, record_every=500),
        n_train=2000,
        n_test=2000,
    )
    fields.update(overrides)
    return SweepSpec(**fields)


@pytest.fixture(scope="module")
def noisy_sweep(tmp_path_factory):
    path = tmp_path_factory.mktemp("noisy") / "sweep.csv"
    return path, run_sweep(_noisy_spec(), path, jobs=1, show_progress=False)


@pytest.mark.slow
def test_small_beta_sweep_stays_near_reference(noisy_sweep):
    """At beta = 0.1 and lr = 0.05 every h stays near -ln 2, so both losses track each other"""
    _, frame = noisy_sweep
    gap = drdpo_gap(frame)

    assert len(gap) == len(SEEDS)
    assert (frame["final_loss"] - math.log(2.0)).abs().max() <= 5e-3
    assert (frame["kl"] <= 1e-3).all()
    assert gap["gap"].abs().mean() <= 0.01


@pytest.mark.slow
def test_dr_dpo_keeps_kl_in_line(noisy_sweep):
    _, frame = noisy_sweep

    assert abs(kl_ratio(frame).loc[("kl", 0.1)] - 1.0) <= 0.25


@pytest.mark.slow
def test_sweep_bytes_do_not_depend_on_workers(noisy_sweep, tmp_path):
    path, _ = noisy_sweep
    parallel = tmp_path / "parallel.csv"
    run_sweep(_noisy_spec(), parallel, jobs=8, show_progress=False)

    assert parallel.read_bytes() == path.read_bytes()


@pytest.mark.slow
def test_noise_lowers_best_beta_prime(tmp_path):
    spec = _noisy_spec(
        beta_primes=[0.1, 0.3, 1.0, 3.0, 10.0], flip_rates=[0.0, 0.2, 0.4], losses=["drdpo"]
    )
    frame = run_sweep(spec, tmp_path / "beta_prime.csv", jobs=4, show_progress=False)
    best = best_beta_prime(frame)

    assert len(best) == len(SEEDS)
    assert (best[0.4] <= best[0.0]).sum() >= 7


def _flipped_task():
    """True order A > B > C > D; 8 of the 21 training pairs are flipped.

    A and B each tie C one win apiece, so only the D comparisons separate them.
    """
    space = PromptSpace(num_prompts=1, completions_per_prompt=4)
    counts = {(B, D): (6, 4), (A, D): (5, 2), (A, C): (1, 1), (B, C): (1, 1)}
    pairs = []
    for (better, worse), (kept, flipped) in counts.items():
        pairs += [PreferencePair(prompt=0, chosen=better, rejected=worse)] * kept
        pairs += [PreferencePair(prompt=0, chosen=worse, rejected=better, flipped=True)] * flipped
    order = [A, B, C, D]
    clean = [
        PreferencePair(prompt=0, chosen=order[i], rejected=order[j])
        for i in range(len(order))
        for j in range(i + 1, len(order))
    ]
    return (
        TabularPolicy.uniform(space),
        PreferenceDataset(pairs=pairs, space=space),
        PreferenceDataset(pairs=clean, space=space),
    )


def test_dr_dpo_beats_dpo_on_flipped_pairs():
    """DPO pulls C to the midpoint of A and B and misorders B, C; Dr. DPO leaves tied pairs alone"""
    reference, dataset, clean = _flipped_task()
    accuracy = {}
    for kind in (LossKind.DPO, LossKind.DRDPO):
        config = TrainConfig(
            loss=LossSpec(kind=kind, beta=1.0, beta_prime=1.0), learning_rate=1.0, steps=2000, record_every=500
        )
        _, report = train(reference, dataset, config, clean_test=clean)
        accuracy[kind] = report.final_preference_accuracy
        assert report.final_kl > 0.01

    assert accuracy[LossKind.DPO] == pytest.approx(5 / 6)
    assert accuracy[LossKind.DRDPO] == 1.0


def test_smoke_pipeline(tmp_path):
    spec = _noisy_spec(
        beta_primes=[0.5, 1.0],
        flip_rates=[0.0, 0.4],
        seeds=[0, 1],
        task=TaskSpec(space=PromptSpace(num_prompts=3, completions_per_prompt=4)),
        train=TrainConfig(learning_rate=0.05, steps=150, record_every=50),
        n_train=300,
        n_test=300,
    )
    frame = run_sweep(spec, tmp_path / "smoke.csv", jobs=1, show_progress=False)
    summary = summarize(frame)

    assert len(frame) == spec.size == 4 + 8
    assert frame["preference_accuracy"].between(0.0, 1.0).all()
    assert (frame["kl"] >= 0.0).all()
    assert set(summary) == {"accuracy", "gap", "kl_ratio", "best_beta_prime"}
    assert frame["bound"].notna().sum() == 8
    clean_dpo = frame[(frame["loss"] == "dpo") & (frame["flip_rate"] == 0.0)]
    assert (clean_dpo["preference_accuracy"] > 0.5).all()
