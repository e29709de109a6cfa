"""
Summaries of a sweep table for the ``report`` command
"""

import logging
from typing import Dict, Optional

import pandas as pd

from drdpo.errors import ConfigError

logger = logging.getLogger(__name__)

MATCH_KEYS = ["phi", "beta", "pointwise_rho", "flip_rate", "seed"]
CURVE_KEYS = ["loss", "phi", "beta_prime", "pointwise_rho", "flip_rate"]


def _rows(frame: pd.DataFrame, loss: str) -> pd.DataFrame:
    return frame[frame["loss"] == loss]


def accuracy_table(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean preference accuracy over seeds, one column per flip rate."""
    grouped = frame.groupby(["loss", "phi", "beta", "beta_prime", "pointwise_rho", "flip_rate"])
    return grouped["preference_accuracy"].mean().unstack("flip_rate")


def _pick_beta_prime(drdpo: pd.DataFrame, beta_prime: Optional[float]) -> float:
    available = sorted(drdpo["beta_prime"].unique())
    if beta_prime is None:
        return 1.0 if 1.0 in available else available[0]
    if beta_prime not in available:
        raise ConfigError(f"beta'={beta_prime} not in the sweep (have {available})")
    return beta_prime


def drdpo_gap(frame: pd.DataFrame, beta_prime: Optional[float] = None) -> pd.DataFrame:
    """Dr. DPO minus DPO accuracy for every matched (phi, beta, rho, flip rate, seed).

    With several beta' values in the sweep, ``beta_prime`` picks one
    (default 1.0 when present).
    """
    drdpo, dpo = _rows(frame, "drdpo"), _rows(frame, "dpo")
    if drdpo.empty or dpo.empty:
        raise ConfigError("the gap needs both dpo and drdpo rows")
    chosen = _pick_beta_prime(drdpo, beta_prime)
    merged = pd.merge(
        drdpo[drdpo["beta_prime"] == chosen][MATCH_KEYS + ["preference_accuracy"]],
        dpo[MATCH_KEYS + ["preference_accuracy"]],
        on=MATCH_KEYS,
        suffixes=("_drdpo", "_dpo"),
    )
    merged["gap"] = merged["preference_accuracy_drdpo"] - merged["preference_accuracy_dpo"]
    merged["beta_prime"] = chosen
    return merged.sort_values(MATCH_KEYS).reset_index(drop=True)


def best_beta_prime(frame: pd.DataFrame) -> pd.DataFrame:
    """Accuracy-maximizing beta' per (phi, beta, rho, seed), one column per flip rate.

    Ties go to the smaller beta'.
    """
    drdpo = _rows(frame, "drdpo").sort_values(MATCH_KEYS + ["beta_prime"])
    if drdpo.empty:
        raise ConfigError("no drdpo rows in the sweep")
    best = drdpo.loc[drdpo.groupby(MATCH_KEYS)["preference_accuracy"].idxmax()]
    return best.pivot_table(
        index=["phi", "beta", "pointwise_rho", "seed"], columns="flip_rate", values="beta_prime"
    )


def best_beta(frame: pd.DataFrame) -> pd.DataFrame:
    """Reward-maximizing beta per (loss, phi, beta', flip rate, seed), one column per pointwise rho.

    The score is the expected latent reward of the trained policy; ties go to
    the smaller beta.
    """
    keys = ["loss", "phi", "beta_prime", "flip_rate", "pointwise_rho", "seed"]
    rows = frame.dropna(subset=["expected_reward"]).sort_values(keys + ["beta"])
    if rows.empty:
        raise ConfigError("the sweep has no expected_reward values")
    best = rows.loc[rows.groupby(keys)["expected_reward"].idxmax()]
    return best.pivot_table(index=keys[:4] + ["seed"], columns="pointwise_rho", values="beta")


def reward_kl_frontier(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean (kl, expected_reward) per beta, ordered by KL along each curve.

    A curve is one (loss, phi, beta', rho, flip rate); ``pareto`` marks the
    points no lower-KL point of the same curve beats on reward.
    """
    rows = frame.dropna(subset=["expected_reward"])
    if rows.empty:
        raise ConfigError("the sweep has no expected_reward values")
    points = rows.groupby(CURVE_KEYS + ["beta"])[["kl", "expected_reward"]].mean().reset_index()
    points = points.sort_values(
        CURVE_KEYS + ["kl", "expected_reward"],
        ascending=[True] * len(CURVE_KEYS) + [True, False],
    )
    best_before = points.groupby(CURVE_KEYS)["expected_reward"].transform(lambda s: s.cummax().shift())
    points["pareto"] = best_before.isna() | (points["expected_reward"] > best_before)
    return points.set_index(CURVE_KEYS + ["beta"])


def kl_ratio(frame: pd.DataFrame) -> pd.Series:
    """Mean KL of Dr. DPO over mean KL of DPO, per (phi, beta)."""
    drdpo, dpo = _rows(frame, "drdpo"), _rows(frame, "dpo")
    if drdpo.empty or dpo.empty:
        raise ConfigError("the KL ratio needs both dpo and drdpo rows")
    keys = ["phi", "beta"]
    return (drdpo.groupby(keys)["kl"].mean() / dpo.groupby(keys)["kl"].mean()).rename("kl_ratio")


def summarize(frame: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    """Every summary the table supports; comparisons needing absent losses are skipped."""
    summary: Dict[str, pd.DataFrame] = {"accuracy": accuracy_table(frame)}
    losses = set(frame["loss"].unique())
    if {"dpo", "drdpo"} <= losses:
        summary["gap"] = drdpo_gap(frame)
        summary["kl_ratio"] = kl_ratio(frame).to_frame()
    else:
        logger.info("dpo and drdpo not both present; skipping gap and KL ratio")
    if "drdpo" in losses and frame[frame["loss"] == "drdpo"]["beta_prime"].nunique() > 1:
        summary["best_beta_prime"] = best_beta_prime(frame)
    if frame["beta"].nunique() > 1 and frame["expected_reward"].notna().any():
        summary["best_beta"] = best_beta(frame)
        summary["frontier"] = reward_kl_frontier(frame)
    return summary
