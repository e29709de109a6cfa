"""
Unit tests for artifact persistence
"""

import json

import pandas as pd
import pytest

from drdpo.errors import StorageError
from drdpo.schemas import LossSpec, NoiseSpec, PromptSpace, TaskSpec, TrainReport, WeightStats
from drdpo.storage import (
    SWEEP_COLUMNS,
    SWEEP_NOTE,
    SWEEP_SCHEMA,
    ArtifactStore,
    read_dataset,
    read_json,
    read_sweep_csv,
    write_dataset,
    write_json,
    write_sweep_csv,
)
from drdpo.synth import build_task

TASK_SPEC = TaskSpec(space=PromptSpace(num_prompts=3, completions_per_prompt=4), seed=7)
NOISE = NoiseSpec(pairwise_p=0.2, seed=7)


@pytest.fixture
def report():
    return TrainReport(
        loss=LossSpec(kind="drdpo", beta=0.1, beta_prime=0.5),
        loss_curve=[(0, 0.6931471805599453), (10, 0.5123)],
        final_loss=0.5123,
        final_preference_accuracy=0.75,
        final_expected_reward=0.125,
        final_kl=0.01,
        weight_stats=[WeightStats(step=0, min=1.0, max=1.0, mean=1.0)],
    )


def _row(seed, accuracy):
    return {
        "loss": "dpo",
        "phi": "kl",
        "beta": 0.1,
        "beta_prime": 1.0,
        "epsilon": 0.0,
        "tau": 0.1,
        "flip_rate": 0.4,
        "pointwise_rho": 0.0,
        "seed": seed,
        "preference_accuracy": accuracy,
        "expected_reward": 0.3,
        "kl": 0.02,
        "final_loss": 0.6,
        "bound": None,
    }


def test_json_round_trip(tmp_path):
    doc = {"a": [1.5, -0.1], "b": {"c": 1e-300}}
    path = write_json(tmp_path / "nested" / "doc.json", doc)

    assert read_json(path) == doc


def test_json_refuses_nan(tmp_path):
    with pytest.raises(StorageError):
        write_json(tmp_path / "bad.json", {"x": float("nan")})


def test_read_missing_file(tmp_path):
    with pytest.raises(StorageError):
        read_json(tmp_path / "absent.json")


def test_storage_error_is_os_error(tmp_path):
    with pytest.raises(OSError):
        read_json(tmp_path / "absent.json")


def test_dataset_round_trip(tiny_task, tmp_path):
    path = write_dataset(tmp_path / "train.jsonl", tiny_task.train)

    assert read_dataset(path, tiny_task.train.space) == tiny_task.train
    assert len(path.read_text().splitlines()) == len(tiny_task.train)


def test_dataset_outside_space(tiny_task, tmp_path):
    path = write_dataset(tmp_path / "train.jsonl", tiny_task.train)

    with pytest.raises(StorageError):
        read_dataset(path, PromptSpace(num_prompts=1, completions_per_prompt=2))


def test_dataset_malformed_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"prompt": 0, "chosen": 1}\n')

    with pytest.raises(StorageError):
        read_dataset(path, PromptSpace(num_prompts=1, completions_per_prompt=2))


def test_task_round_trip(tiny_task, tmp_path):
    store = ArtifactStore(tmp_path / "task")
    written = store.save_task(tiny_task, TASK_SPEC, NOISE)

    assert set(written) == {"reward", "reference", "train", "test", "task"}
    assert all(p.exists() for p in written.values())
    loaded = store.load_task()
    assert loaded.reward == tiny_task.reward
    assert loaded.reference == tiny_task.reference
    assert loaded.train == tiny_task.train
    assert loaded.test == tiny_task.test
    assert read_json(written["task"])["noise"]["pairwise_p"] == 0.2


def test_same_task_writes_identical_bytes(tmp_path):
    for name in ("a", "b"):
        ArtifactStore(tmp_path / name).save_task(build_task(TASK_SPEC, NOISE, 200, 100), TASK_SPEC, NOISE)

    for filename in ("reward.json", "reference.json", "train.jsonl", "test.jsonl", "task.json"):
        assert (tmp_path / "a" / filename).read_bytes() == (tmp_path / "b" / filename).read_bytes()


def test_policy_round_trip(tiny_task, tmp_path):
    store = ArtifactStore(tmp_path)
    store.save_policy(tiny_task.reference)

    assert store.load_policy() == tiny_task.reference


def test_bad_policy_document(tmp_path):
    write_json(tmp_path / "policy.json", {"logits": [[0.0, 1.0]]})

    with pytest.raises(StorageError):
        ArtifactStore(tmp_path).load_policy()


def test_report_round_trip(report, tmp_path):
    store = ArtifactStore(tmp_path)
    path = store.save_report(report)

    assert store.load_report() == report
    assert json.loads(path.read_text())["loss"]["kind"] == "drdpo"


def test_bad_report(tmp_path):
    write_json(tmp_path / "report.json", {"final_loss": 1.0})

    with pytest.raises(StorageError):
        ArtifactStore(tmp_path).load_report()


def test_sweep_csv_layout(tmp_path):
    path = write_sweep_csv(tmp_path / "sweep.csv", [_row(0, 0.6), _row(1, 0.7)])
    lines = path.read_text().splitlines()

    assert lines[0] == SWEEP_SCHEMA
    assert lines[1] == SWEEP_NOTE
    assert lines[2] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 5


def test_read_sweep_rejects_old_schema(tmp_path):
    path = write_sweep_csv(tmp_path / "sweep.csv", [_row(0, 0.6)])
    path.write_text(path.read_text().replace(SWEEP_SCHEMA, "# drdpo-sweep schema=1"))

    with pytest.raises(StorageError):
        read_sweep_csv(path)


def test_sweep_csv_round_trip(tmp_path):
    path = write_sweep_csv(tmp_path / "sweep.csv", [_row(0, 0.6), _row(1, 0.7)])
    frame = read_sweep_csv(path)

    assert list(frame.columns) == list(SWEEP_COLUMNS)
    assert frame["preference_accuracy"].tolist() == [0.6, 0.7]
    assert frame["loss"].tolist() == ["dpo", "dpo"]


def test_sweep_csv_keeps_missing_expected_reward(tmp_path):
    row = dict(_row(0, 0.6), expected_reward=None)
    frame = read_sweep_csv(write_sweep_csv(tmp_path / "sweep.csv", [row]))

    assert pd.isna(frame.loc[0, "expected_reward"])


def test_read_sweep_rejects_other_csv(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("loss,beta\ndpo,0.1\n")

    with pytest.raises(StorageError):
        read_sweep_csv(path)


def test_read_sweep_rejects_missing_columns(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text(SWEEP_SCHEMA + "\nloss,beta\ndpo,0.1\n")

    with pytest.raises(StorageError):
        read_sweep_csv(path)
