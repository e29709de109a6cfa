"""
Parallel sweep runner over the SweepSpec cross product

Every run is independent: it rebuilds its task from its own seed, trains,
and writes its CSV row together with its full TrainReport to a private JSON
file. The merge reads the files back in run-index order, so the table does
not depend on the number of workers. The run files are kept next to the CSV.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from tqdm import tqdm

from drdpo.errors import ConfigError, StorageError
from drdpo.schemas import LossKind, NoiseSpec, RunPoint, SweepSpec, TrainReport
from drdpo.storage import SWEEP_COLUMNS, read_json, read_sweep_csv, write_json, write_sweep_csv
from drdpo.synth import build_task
from drdpo.train import BOUND_DELTA, BOUND_H_FLOOR, train

logger = logging.getLogger(__name__)

RUNS_SUFFIX = "-runs"


def run_point(
    spec: SweepSpec,
    point: RunPoint,
    bound_floor: float = BOUND_H_FLOOR,
    bound_delta: float = BOUND_DELTA,
) -> Tuple[Dict[str, Any], TrainReport]:
    """Generate the point's task, train on it and return its CSV row and report."""
    task_spec = spec.task.model_copy(update={"seed": point.seed})
    noise = NoiseSpec(pointwise_rho=point.pointwise_rho, pairwise_p=point.flip_rate, seed=point.seed)
    task = build_task(task_spec, noise, spec.n_train, spec.n_test)
    config = spec.train.model_copy(update={"loss": point.loss, "seed": point.seed})
    _, report = train(
        task.reference,
        task.train,
        config,
        clean_test=task.test,
        reward=task.reward,
        bound_floor=bound_floor,
        bound_delta=bound_delta,
    )
    row = {
        "loss": point.loss.kind.value,
        "phi": str(point.loss.phi),
        "beta": point.loss.beta,
        "beta_prime": point.loss.beta_prime,
        "epsilon": point.loss.epsilon,
        "tau": point.loss.tau,
        "flip_rate": point.flip_rate,
        "pointwise_rho": point.pointwise_rho,
        "seed": point.seed,
        "preference_accuracy": report.final_preference_accuracy,
        "expected_reward": report.final_expected_reward,
        "kl": report.final_kl,
        "final_loss": report.final_loss,
        "bound": None if report.bound is None else report.bound.value,
    }
    return row, report


def runs_dir(out_csv: Path) -> Path:
    """<dir>/<stem>-runs: one run-NNNNNN.json per sweep point."""
    out_csv = Path(out_csv)
    return out_csv.parent / f"{out_csv.stem}{RUNS_SUFFIX}"


def run_path(runs: Path, index: int) -> Path:
    return runs / f"run-{index:06d}.json"


def load_run(runs: Path, index: int) -> Tuple[Dict[str, Any], TrainReport]:
    """The row and TrainReport a sweep stored for run ``index``."""
    path = run_path(runs, index)
    doc = read_json(path)
    try:
        return doc["row"], TrainReport.model_validate(doc["report"])
    except (KeyError, TypeError, ValueError) as e:
        logger.error(f"Error parsing run file {path}: {e}")
        raise StorageError(f"{path} is not a sweep run file: {e}") from e


def _run_to_file(job: Tuple[SweepSpec, RunPoint, str, float, float]) -> int:
    spec, point, runs, bound_floor, bound_delta = job
    row, report = run_point(spec, point, bound_floor, bound_delta)
    doc = {
        "index": point.index,
        "point": point.model_dump(mode="json"),
        "row": row,
        "report": report.model_dump(mode="json"),
    }
    write_json(run_path(Path(runs), point.index), doc)
    return point.index


def run_sweep(
    spec: SweepSpec,
    out_csv: Path,
    jobs: int = 1,
    show_progress: bool = True,
    bound_floor: float = BOUND_H_FLOOR,
    bound_delta: float = BOUND_DELTA,
) -> pd.DataFrame:
    """
    Run every point of the sweep and write the merged CSV.

    Args:
        spec: The sweep grid with its base task and training configuration.
        out_csv: Destination of the table. Each run's row and TrainReport
            stay in ``runs_dir(out_csv)``.
        jobs: Worker processes; 1 runs in-process.
        show_progress: Draw a tqdm bar over finished runs.
        bound_floor: Clamp for the lowest h in the Dr. DPO bound.
        bound_delta: Failure probability of that bound.

    Returns:
        The merged table as written.
    """
    if jobs < 1:
        raise ConfigError(f"jobs must be at least 1, got {jobs}")
    points: List[RunPoint] = list(spec.points())
    others = [k for k in spec.losses if k is not LossKind.DRDPO]
    if len(spec.beta_primes) > 1 and others:
        logger.warning(
            f"beta' axis collapsed to {spec.beta_primes[0]} for "
            f"{', '.join(k.value for k in others)}"
        )
    logger.info(f"sweep of {len(points)} runs on {jobs} worker(s)")

    out_csv = Path(out_csv)
    runs = runs_dir(out_csv)
    runs.mkdir(parents=True, exist_ok=True)
    stale = sorted(runs.glob("run-*.json"))
    for path in stale:
        path.unlink()
    if stale:
        logger.debug(f"removed {len(stale)} run files of an earlier sweep from {runs}")
    work = [(spec, point, str(runs), bound_floor, bound_delta) for point in points]
    bar: Optional[tqdm] = tqdm(total=len(points), desc="sweep", unit="run") if show_progress else None
    try:
        if jobs == 1:
            for job in work:
                _run_to_file(job)
                if bar is not None:
                    bar.update()
        else:
            with ProcessPoolExecutor(max_workers=jobs) as executor:
                for _ in executor.map(_run_to_file, work):
                    if bar is not None:
                        bar.update()
        rows = [read_json(run_path(runs, point.index))["row"] for point in points]
    finally:
        if bar is not None:
            bar.close()
    write_sweep_csv(out_csv, rows)
    return read_sweep_csv(out_csv)[list(SWEEP_COLUMNS)]
