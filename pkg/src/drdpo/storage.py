"""
On-disk artifacts: JSON tables and reports, JSONL datasets, sweep CSVs

Floats are written with Python's shortest round-trip repr, and nothing
time-dependent is stored, so identical inputs give byte-identical files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Union

import pandas as pd

from drdpo.core import PreferenceDataset, PreferencePair, RewardTable, TabularPolicy
from drdpo.errors import StorageError
from drdpo.schemas import NoiseSpec, PromptSpace, TaskSpec, TrainReport
from drdpo.synth import SyntheticTask

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SWEEP_SCHEMA = "# drdpo-sweep schema=2"
SWEEP_NOTE = "# beta_prime varies for drdpo rows only; other losses run once at the first beta_prime"
SWEEP_COLUMNS = (
    "loss",
    "phi",
    "beta",
    "beta_prime",
    "epsilon",
    "tau",
    "flip_rate",
    "pointwise_rho",
    "seed",
    "preference_accuracy",
    "expected_reward",
    "kl",
    "final_loss",
    "bound",
)


def write_json(path: PathLike, doc: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    except (OSError, TypeError, ValueError) as e:
        logger.error(f"Error writing {path}: {e}")
        raise StorageError(f"cannot write {path}: {e}") from e
    logger.debug(f"wrote {path}")
    return path


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        logger.error(f"Error reading {path}: {e}")
        raise StorageError(f"cannot read {path}: {e}") from e


def write_dataset(path: PathLike, dataset: PreferenceDataset) -> Path:
    """One JSON object per line: prompt, chosen, rejected, flipped."""
    path = Path(path)
    lines = (json.dumps(pair.model_dump()) for pair in dataset.pairs)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            for line in lines:
                handle.write(line + "\n")
    except OSError as e:
        logger.error(f"Error writing dataset {path}: {e}")
        raise StorageError(f"cannot write {path}: {e}") from e
    logger.debug(f"wrote {len(dataset)} pairs to {path}")
    return path


def read_dataset(path: PathLike, space: PromptSpace) -> PreferenceDataset:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as handle:
            pairs = [PreferencePair.model_validate_json(line) for line in handle if line.strip()]
        return PreferenceDataset(pairs=pairs, space=space)
    except (OSError, ValueError, IndexError) as e:
        logger.error(f"Error reading dataset {path}: {e}")
        raise StorageError(f"cannot read {path}: {e}") from e


def write_sweep_csv(path: PathLike, rows: Iterable[Dict[str, Any]]) -> Path:
    """Sweep table with the fixed column order, preceded by the schema and note comment lines."""
    path = Path(path)
    frame = pd.DataFrame(list(rows), columns=list(SWEEP_COLUMNS))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            handle.write(SWEEP_SCHEMA + "\n")
            handle.write(SWEEP_NOTE + "\n")
            frame.to_csv(handle, index=False, lineterminator="\n")
    except OSError as e:
        logger.error(f"Error writing sweep table {path}: {e}")
        raise StorageError(f"cannot write {path}: {e}") from e
    logger.info(f"wrote {len(frame)} sweep rows to {path}")
    return path


def read_sweep_csv(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as handle:
            header = handle.readline().rstrip("\n")
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    except (OSError, ValueError) as e:
        logger.error(f"Error reading sweep table {path}: {e}")
        raise StorageError(f"cannot read {path}: {e}") from e
    if header != SWEEP_SCHEMA:
        raise StorageError(f"{path} is not a drdpo sweep table (first line {header!r})")
    missing = [c for c in SWEEP_COLUMNS if c not in frame.columns]
    if missing:
        raise StorageError(f"{path} lacks sweep columns {missing}")
    return frame


class ArtifactStore:
    """A directory holding one generated task and the runs trained on it."""

    REWARD = "reward.json"
    REFERENCE = "reference.json"
    TRAIN = "train.jsonl"
    TEST = "test.jsonl"
    TASK = "task.json"
    POLICY = "policy.json"
    REPORT = "report.json"

    def __init__(self, root: PathLike):
        """
        Args:
            root: Directory of the artifacts; created on first write.
        """
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def save_task(self, task: SyntheticTask, spec: TaskSpec, noise: NoiseSpec) -> Dict[str, Path]:
        """
        Write every file of a generated task.

        Args:
            task: Reward, reference and the two datasets.
            spec: Task construction parameters, kept for provenance.
            noise: Noise parameters, kept for provenance.

        Returns:
            Mapping of artifact kind to written path.
        """
        written = {
            "reward": write_json(self.path(self.REWARD), task.reward.to_document()),
            "reference": write_json(self.path(self.REFERENCE), task.reference.to_document()),
            "train": write_dataset(self.path(self.TRAIN), task.train),
            "test": write_dataset(self.path(self.TEST), task.test),
            "task": write_json(
                self.path(self.TASK),
                {"task": spec.model_dump(mode="json"), "noise": noise.model_dump(mode="json")},
            ),
        }
        logger.info(f"saved task to {self.root}")
        return written

    def load_task(self) -> SyntheticTask:
        doc = read_json(self.path(self.REWARD))
        try:
            reward = RewardTable.from_document(doc)
        except (KeyError, ValueError) as e:
            logger.error(f"Error parsing reward table: {e}")
            raise StorageError(f"{self.path(self.REWARD)} is not a reward document: {e}") from e
        reference = self.load_policy(self.REFERENCE)
        return SyntheticTask(
            reward=reward,
            reference=reference,
            train=read_dataset(self.path(self.TRAIN), reference.space),
            test=read_dataset(self.path(self.TEST), reference.space),
        )

    def save_policy(self, policy: TabularPolicy, name: str = POLICY) -> Path:
        return write_json(self.path(name), policy.to_document())

    def load_policy(self, name: str = POLICY) -> TabularPolicy:
        doc = read_json(self.path(name))
        try:
            return TabularPolicy.from_document(doc)
        except (KeyError, ValueError) as e:
            logger.error(f"Error parsing policy {name}: {e}")
            raise StorageError(f"{self.path(name)} is not a policy document: {e}") from e

    def save_report(self, report: TrainReport, name: str = REPORT) -> Path:
        return write_json(self.path(name), report.model_dump(mode="json"))

    def load_report(self, name: str = REPORT) -> TrainReport:
        try:
            return TrainReport.model_validate(read_json(self.path(name)))
        except ValueError as e:
            logger.error(f"Error parsing report {name}: {e}")
            raise StorageError(f"{self.path(name)} is not a train report: {e}") from e
