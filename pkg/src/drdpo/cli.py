from dotenv import load_dotenv

# Load environment variables BEFORE importing any drdpo modules
load_dotenv()

import logging
from functools import wraps
from pathlib import Path
from typing import Optional, Tuple

import click
from pydantic import ValidationError

from drdpo.analysis import summarize
from drdpo.config import get_settings
from drdpo.errors import DrDPOError
from drdpo.schemas import LossKind, LossSpec, NoiseSpec, PromptSpace, SweepSpec, TaskSpec, TrainConfig
from drdpo.storage import ArtifactStore, read_sweep_csv
from drdpo.sweep import run_sweep, runs_dir
from drdpo.synth import build_task
from drdpo.train import train
from drdpo.utils.intro import print_intro
from drdpo.utils.logger import Logger
from drdpo.verify import run_checks

RATE = click.FloatRange(0.0, 1.0)


def _field_errors(error: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(p) for p in e['loc']) or 'value'}: {e['msg']}" for e in error.errors()
    )


def handle_errors(func):
    """Turn library failures into click errors: invalid values are usage errors (exit 2)."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ValidationError as e:
            raise click.UsageError(_field_errors(e)) from e
        except DrDPOError as e:
            raise click.ClickException(str(e)) from e
    return wrapper


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log library detail (DEBUG).")
@click.option("--quiet", "-q", is_flag=True, help="Print only warnings, errors and failed checks.")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, quiet: bool):
    """DPO and Dr. DPO experiments on synthetic tabular preference tasks."""
    settings = get_settings()
    logging.basicConfig(
        level=logging.DEBUG if verbose else settings.log_level.upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.obj = {"logger": Logger(quiet=quiet), "settings": settings, "quiet": quiet}


@cli.command()
@click.option("--output", "-o", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Directory for the task files (default: <output_dir>/task).")
@click.option("--num-prompts", type=int, default=8, show_default=True)
@click.option("--completions-per-prompt", type=int, default=8, show_default=True)
@click.option("--reward-scale", type=float, default=2.0, show_default=True)
@click.option("--ref-sharpness", type=float, default=1.0, show_default=True)
@click.option("--pointwise-rho", type=RATE, default=0.0, show_default=True)
@click.option("--pairwise-p", type=RATE, default=0.0, show_default=True)
@click.option("--n-train", type=click.IntRange(min=1), default=2000, show_default=True)
@click.option("--n-test", type=click.IntRange(min=1), default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Seeds the task and the flips.")
@click.pass_obj
@handle_errors
def generate(obj, output: Optional[Path], num_prompts: int, completions_per_prompt: int,
             reward_scale: float, ref_sharpness: float, pointwise_rho: float, pairwise_p: float,
             n_train: int, n_test: int, seed: int):
    """Write a synthetic task: reward, reference, noisy train set, clean test set."""
    logger: Logger = obj["logger"]
    output = output or obj["settings"].output_dir / "task"
    spec = TaskSpec(
        space=PromptSpace(num_prompts=num_prompts, completions_per_prompt=completions_per_prompt),
        reward_scale=reward_scale,
        ref_sharpness=ref_sharpness,
        seed=seed,
    )
    noise = NoiseSpec(pointwise_rho=pointwise_rho, pairwise_p=pairwise_p, seed=seed)
    with logger.progress("Generating task...", "Task generated"):
        task = build_task(spec, noise, n_train, n_test)
    written = ArtifactStore(output).save_task(task, spec, noise)
    logger.log_metric("flipped fraction", task.train.flipped_fraction)
    for kind, path in written.items():
        logger.log_info(f"{kind}: {path}")


@cli.command("train")
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--loss", type=click.Choice([k.value for k in LossKind], case_sensitive=False),
              default=LossKind.DPO.value, show_default=True)
@click.option("--beta", type=float, default=0.1, show_default=True)
@click.option("--beta-prime", type=float, default=1.0, show_default=True)
@click.option("--epsilon", type=float, default=0.0, show_default=True)
@click.option("--tau", type=float, default=0.1, show_default=True)
@click.option("--phi", default="kl", show_default=True,
              help="Implicit-reward divergence: kl, jsd or alpha:<order in (0, 1)>.")
@click.option("--learning-rate", type=float, default=0.05, show_default=True)
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--batch-size", type=int, default=0, show_default=True, help="0 trains full batch.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seeds the minibatch order.")
@click.option("--record-every", type=int, default=100, show_default=True)
@click.option("--output", "-o", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Where report.json and policy.json go (default: DATA_DIR).")
@click.pass_obj
@handle_errors
def train_command(obj, data_dir: Path, loss: str, beta: float, beta_prime: float, epsilon: float,
                  tau: float, phi: str, learning_rate: float, steps: int, batch_size: int, seed: int,
                  record_every: int, output: Optional[Path]):
    """Train a policy on a generated task and write its report."""
    logger: Logger = obj["logger"]
    settings = obj["settings"]
    config = TrainConfig(
        loss=LossSpec(
            kind=loss.lower(), beta=beta, beta_prime=beta_prime, epsilon=epsilon, tau=tau, phi=phi
        ),
        learning_rate=learning_rate,
        steps=steps,
        batch_size=batch_size,
        seed=seed,
        record_every=record_every,
    )
    task = ArtifactStore(data_dir).load_task()
    with logger.progress(f"Training {config.loss.kind.value}...", "Training finished"):
        policy, report = train(
            task.reference,
            task.train,
            config,
            clean_test=task.test,
            reward=task.reward,
            bound_floor=settings.bound_h_floor,
            bound_delta=settings.bound_delta,
        )
    store = ArtifactStore(output or data_dir)
    store.save_policy(policy)
    path = store.save_report(report)
    logger.log_header("Final metrics")
    logger.log_metric("loss", report.final_loss)
    logger.log_metric("preference accuracy", report.final_preference_accuracy)
    logger.log_metric("expected reward", report.final_expected_reward)
    logger.log_metric("kl", report.final_kl)
    if report.bound is not None:
        logger.log_metric(f"bound (delta={report.bound.delta:g})", report.bound.value)
    logger.log_info(f"report: {path}")


@cli.command()
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--output", "-o", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="CSV destination (default: <output_dir>/sweep.csv).")
@click.option("--jobs", "-j", type=click.IntRange(min=1), default=None,
              help="Worker processes (default from DRDPO_JOBS).")
@click.option("--phi", "phis", multiple=True,
              help="Divergence to sweep (repeatable); replaces the spec's phis.")
@click.pass_obj
@handle_errors
def sweep(obj, spec_file: Path, output: Optional[Path], jobs: Optional[int], phis: Tuple[str, ...]):
    """Run a JSON SweepSpec: one CSV row and one report file per run."""
    logger: Logger = obj["logger"]
    settings = obj["settings"]
    spec = SweepSpec.model_validate_json(spec_file.read_text(encoding="utf-8"))
    if phis:
        spec = SweepSpec.model_validate({**spec.model_dump(), "phis": list(phis)})
    jobs = jobs or settings.jobs
    output = output or settings.output_dir / "sweep.csv"
    if not obj["quiet"]:
        print_intro()
    logger.log_plan(
        f"Sweep of {spec.size} runs on {jobs} worker(s)",
        [
            f"losses: {', '.join(k.value for k in spec.losses)}",
            f"phi: {', '.join(str(phi) for phi in spec.phis)}",
            f"beta: {spec.betas}",
            f"beta': {spec.beta_primes}",
            f"flip rates: {spec.flip_rates}",
            f"pointwise rho: {spec.pointwise_rhos}",
            f"seeds: {spec.seeds}",
        ],
    )
    frame = run_sweep(
        spec,
        output,
        jobs=jobs,
        show_progress=not obj["quiet"],
        bound_floor=settings.bound_h_floor,
        bound_delta=settings.bound_delta,
    )
    logger.log_info(f"{len(frame)} rows written to {output}")
    logger.log_info(f"run reports in {runs_dir(output)}")


@cli.command()
@click.option("--tolerance-scale", type=float, default=1.0, show_default=True,
              help="Multiply every tolerance.")
@click.option("--seed", type=int, default=None, help="Seed of the random instances (default from DRDPO_VERIFY_SEED).")
@click.option("--perturb-gradient", type=float, default=0.0, hidden=True)
@click.pass_context
@handle_errors
def verify(ctx: click.Context, tolerance_scale: float, seed: Optional[int], perturb_gradient: float):
    """Check every closed form against its oracle; exit 1 if any check fails."""
    logger: Logger = ctx.obj["logger"]
    seed = ctx.obj["settings"].verify_seed if seed is None else seed
    if not ctx.obj["quiet"]:
        print_intro()
    with logger.progress("Running checks...", "Checks finished"):
        results = run_checks(seed=seed, tolerance_scale=tolerance_scale, perturbation=perturb_gradient)
    logger.log_header("Checks")
    for result in results:
        logger.log_check(result)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.log_error(f"failed: {', '.join(failed)}")
        ctx.exit(1)
    logger.log_info(f"all {len(results)} checks passed")


@cli.command()
@click.argument("csv_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--output", "-o", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Also write each summary as <name>.csv in this directory.")
@click.pass_obj
@handle_errors
def report(obj, csv_file: Path, output: Optional[Path]):
    """Summarize a sweep CSV: accuracy, Dr. DPO gap, KL ratio, best beta' and beta, reward-KL frontier."""
    logger: Logger = obj["logger"]
    summary = summarize(read_sweep_csv(csv_file))
    titles = {
        "accuracy": "MEAN PREFERENCE ACCURACY BY FLIP RATE",
        "gap": "DR. DPO MINUS DPO ACCURACY",
        "kl_ratio": "MEAN KL, DR. DPO OVER DPO",
        "best_beta_prime": "ACCURACY-MAXIMIZING BETA' BY FLIP RATE",
        "best_beta": "REWARD-MAXIMIZING BETA BY POINTWISE NOISE",
        "frontier": "EXPECTED REWARD AGAINST KL, MEAN OVER SEEDS",
    }
    for name, frame in summary.items():
        logger.log_summary(titles[name], frame.to_string())
    if "gap" in summary:
        gap = summary["gap"]
        logger.log_metric("mean gap", float(gap["gap"].mean()))
        logger.log_metric("runs where dr. dpo wins", f"{int((gap['gap'] > 0).sum())}/{len(gap)}")
    if output is not None:
        output.mkdir(parents=True, exist_ok=True)
        for name, frame in summary.items():
            frame.to_csv(output / f"{name}.csv", lineterminator="\n")
        logger.log_info(f"summaries written to {output}")


def main():
    cli(obj={})


if __name__ == "__main__":
    main()
