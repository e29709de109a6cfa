"""
Tabular policies, log-ratios, implicit rewards and exact policy KL

Every quantity is computed exactly on finite tables: log pi(y|x) is the logit
minus the row log-sum-exp, and KL(pi || pi_ref) is a finite sum.
"""

from functools import cached_property
from typing import Any, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import logsumexp

from drdpo.errors import ConfigError, RangeError, ShapeError
from drdpo.schemas import PromptSpace


def _frozen_table(value: Any) -> np.ndarray:
    table = np.array(value, dtype=np.float64)
    if table.ndim != 2:
        raise ShapeError(f"expected a [prompt][completion] matrix, got {table.ndim} dims")
    if not np.all(np.isfinite(table)):
        raise ConfigError("table entries must be finite")
    table.setflags(write=False)
    return table


class TabularPolicy(BaseModel):
    """Per-prompt softmax policy over a finite completion set."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    logits: np.ndarray
    space: PromptSpace

    @field_validator("logits", mode="before")
    @classmethod
    def _check_logits(cls, value: Any) -> np.ndarray:
        return _frozen_table(value)

    @model_validator(mode="after")
    def _shape_matches(self) -> "TabularPolicy":
        if self.logits.shape != self.space.shape:
            raise ShapeError(f"logits shape {self.logits.shape} != space {self.space.shape}")
        return self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TabularPolicy):
            return NotImplemented
        return self.space == other.space and bool(np.array_equal(self.logits, other.logits))

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_logits(cls, logits: Any) -> "TabularPolicy":
        table = _frozen_table(logits)
        n, k = table.shape
        return cls(logits=table, space=PromptSpace(num_prompts=n, completions_per_prompt=k))

    @classmethod
    def uniform(cls, space: PromptSpace) -> "TabularPolicy":
        return cls(logits=np.zeros(space.shape), space=space)

    @cached_property
    def log_probs(self) -> np.ndarray:
        """log pi(y|x) for the whole table (max-subtracted log-sum-exp per row)."""
        return self.logits - logsumexp(self.logits, axis=1, keepdims=True)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def to_document(self) -> Dict[str, Any]:
        return {
            "num_prompts": self.space.num_prompts,
            "completions_per_prompt": self.space.completions_per_prompt,
            "logits": self.logits.tolist(),
        }

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "TabularPolicy":
        space = PromptSpace(
            num_prompts=doc["num_prompts"], completions_per_prompt=doc["completions_per_prompt"]
        )
        return cls(logits=doc["logits"], space=space)


class RewardTable(BaseModel):
    """Latent or learned reward r(x, y) on a finite table."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray
    space: PromptSpace

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value: Any) -> np.ndarray:
        return _frozen_table(value)

    @model_validator(mode="after")
    def _shape_matches(self) -> "RewardTable":
        if self.values.shape != self.space.shape:
            raise ShapeError(f"reward shape {self.values.shape} != space {self.space.shape}")
        return self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RewardTable):
            return NotImplemented
        return self.space == other.space and bool(np.array_equal(self.values, other.values))

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_values(cls, values: Any) -> "RewardTable":
        table = _frozen_table(values)
        n, k = table.shape
        return cls(values=table, space=PromptSpace(num_prompts=n, completions_per_prompt=k))

    def to_document(self) -> Dict[str, Any]:
        return {
            "num_prompts": self.space.num_prompts,
            "completions_per_prompt": self.space.completions_per_prompt,
            "values": self.values.tolist(),
        }

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "RewardTable":
        space = PromptSpace(
            num_prompts=doc["num_prompts"], completions_per_prompt=doc["completions_per_prompt"]
        )
        return cls(values=doc["values"], space=space)


class PreferencePair(BaseModel):
    """(x, y_w, y_l) with a provenance flag recording an injected swap."""

    model_config = ConfigDict(frozen=True)

    prompt: int = Field(..., ge=0)
    chosen: int = Field(..., ge=0)
    rejected: int = Field(..., ge=0)
    flipped: bool = False

    @model_validator(mode="after")
    def _distinct(self) -> "PreferencePair":
        if self.chosen == self.rejected:
            raise ConfigError(f"chosen and rejected are both {self.chosen}")
        return self

    def swapped(self) -> "PreferencePair":
        return PreferencePair(
            prompt=self.prompt, chosen=self.rejected, rejected=self.chosen, flipped=not self.flipped
        )


class PairColumns(NamedTuple):
    prompts: np.ndarray
    chosen: np.ndarray
    rejected: np.ndarray
    flipped: np.ndarray


class PreferenceDataset(BaseModel):
    """Ordered preference pairs over one prompt space."""

    model_config = ConfigDict(frozen=True)

    pairs: List[PreferencePair]
    space: PromptSpace

    @model_validator(mode="after")
    def _indices_in_range(self) -> "PreferenceDataset":
        n, k = self.space.shape
        for i, pair in enumerate(self.pairs):
            if pair.prompt >= n or pair.chosen >= k or pair.rejected >= k:
                raise RangeError(f"pair {i} {pair} outside space {self.space.shape}")
        return self

    def __len__(self) -> int:
        return len(self.pairs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PreferenceDataset):
            return NotImplemented
        return self.space == other.space and self.pairs == other.pairs

    __hash__ = None  # type: ignore[assignment]

    @cached_property
    def columns(self) -> PairColumns:
        cols = PairColumns(
            prompts=np.fromiter((p.prompt for p in self.pairs), dtype=np.intp, count=len(self)),
            chosen=np.fromiter((p.chosen for p in self.pairs), dtype=np.intp, count=len(self)),
            rejected=np.fromiter((p.rejected for p in self.pairs), dtype=np.intp, count=len(self)),
            flipped=np.fromiter((p.flipped for p in self.pairs), dtype=bool, count=len(self)),
        )
        for col in cols:
            col.setflags(write=False)
        return cols

    @property
    def flipped_fraction(self) -> float:
        return float(self.columns.flipped.mean()) if self.pairs else 0.0

    def take(self, indices: Sequence[int]) -> "PreferenceDataset":
        """Sub-dataset in the given order; pairs are already validated."""
        return PreferenceDataset.model_construct(
            pairs=[self.pairs[i] for i in indices], space=self.space
        )

    def restore_orientation(self) -> "PreferenceDataset":
        """Undo every recorded flip, giving the ground-truth orientation."""
        return PreferenceDataset.model_construct(
            pairs=[p.swapped() if p.flipped else p for p in self.pairs], space=self.space
        )

    @classmethod
    def from_columns(
        cls,
        space: PromptSpace,
        prompts: np.ndarray,
        chosen: np.ndarray,
        rejected: np.ndarray,
        flipped: np.ndarray,
    ) -> "PreferenceDataset":
        pairs = [
            PreferencePair(prompt=int(x), chosen=int(w), rejected=int(l), flipped=bool(f))
            for x, w, l, f in zip(prompts, chosen, rejected, flipped)
        ]
        return cls(pairs=pairs, space=space)


def _check_index(space: PromptSpace, prompt: int, completion: int) -> None:
    n, k = space.shape
    if not (0 <= prompt < n and 0 <= completion < k):
        raise RangeError(f"(prompt={prompt}, completion={completion}) outside {space.shape}")


def _check_same_space(policy: TabularPolicy, reference: TabularPolicy) -> None:
    if policy.space != reference.space:
        raise ShapeError(f"policy space {policy.space.shape} != reference {reference.space.shape}")


def check_beta(beta: float, name: str = "beta") -> None:
    if not beta > 0:
        raise ConfigError(f"{name} must be positive, got {beta}")


def log_prob(policy: TabularPolicy, prompt: int, completion: int) -> float:
    _check_index(policy.space, prompt, completion)
    return float(policy.log_probs[prompt, completion])


def log_ratio(policy: TabularPolicy, reference: TabularPolicy, prompt: int, completion: int) -> float:
    """log pi(y|x) - log pi_ref(y|x)."""
    _check_same_space(policy, reference)
    _check_index(policy.space, prompt, completion)
    return float(policy.log_probs[prompt, completion] - reference.log_probs[prompt, completion])


def implicit_reward(
    policy: TabularPolicy, reference: TabularPolicy, prompt: int, completion: int, beta: float
) -> float:
    """The reward the policy encodes relative to the reference: beta * log-ratio."""
    check_beta(beta)
    return beta * log_ratio(policy, reference, prompt, completion)


def kl_policy(policy: TabularPolicy, reference: TabularPolicy) -> float:
    """KL(pi || pi_ref) per prompt, averaged with uniform prompt weights."""
    _check_same_space(policy, reference)
    per_prompt = np.sum(policy.probs * (policy.log_probs - reference.log_probs), axis=1)
    return max(float(per_prompt.mean()), 0.0)


def pair_log_ratios(
    policy: TabularPolicy, reference: TabularPolicy, dataset: PreferenceDataset
) -> Tuple[np.ndarray, np.ndarray]:
    """(log_ratio(y_w), log_ratio(y_l)) for every pair, in dataset order."""
    _check_same_space(policy, reference)
    if dataset.space != policy.space:
        raise ShapeError(f"dataset space {dataset.space.shape} != policy {policy.space.shape}")
    cols = dataset.columns
    ratios = policy.log_probs - reference.log_probs
    return ratios[cols.prompts, cols.chosen], ratios[cols.prompts, cols.rejected]


def pair_log_ratio_margins(
    policy: TabularPolicy, reference: TabularPolicy, dataset: PreferenceDataset
) -> np.ndarray:
    """log_ratio(y_w) - log_ratio(y_l) for every pair, in dataset order."""
    chosen, rejected = pair_log_ratios(policy, reference, dataset)
    return chosen - rejected
