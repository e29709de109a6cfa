from enum import Enum
from itertools import product
from typing import Annotated, Any, Iterator, List, Literal, Optional, Tuple

from pydantic import (
    AliasChoices,
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    field_validator,
    model_validator,
)

from drdpo.errors import ConfigError

Rate = Annotated[float, Field(ge=0.0, le=1.0)]
Positive = Annotated[float, Field(gt=0.0)]


class PromptSpace(BaseModel):
    """A finite set of prompts, each with the same number of completions."""
    model_config = ConfigDict(frozen=True)

    num_prompts: int = Field(..., ge=1, description="Number of prompts x.")
    completions_per_prompt: int = Field(
        ..., ge=2, description="Completions per prompt K; a pair needs two distinct ones."
    )

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.num_prompts, self.completions_per_prompt)


class PhiFamily(BaseModel):
    """A phi-divergence generator: KL, Jensen-Shannon or the alpha family."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["kl", "jsd", "alpha"] = Field("kl", description="Generator family.")
    alpha: Optional[float] = Field(None, gt=0.0, lt=1.0, description="Order, Alpha only.")

    @model_validator(mode="after")
    def _alpha_only_for_alpha(self) -> "PhiFamily":
        if self.kind == "alpha" and self.alpha is None:
            raise ConfigError("alpha family needs an order in (0, 1)")
        if self.kind != "alpha" and self.alpha is not None:
            raise ConfigError(f"{self.kind} takes no alpha")
        return self

    @classmethod
    def parse(cls, text: str) -> "PhiFamily":
        """Parse the flag form: ``kl``, ``jsd`` or ``alpha:<value>``."""
        name, _, value = text.strip().lower().partition(":")
        if name == "alpha":
            try:
                order = float(value)
            except ValueError:
                raise ConfigError(f"bad alpha order in {text!r}") from None
            return cls(kind="alpha", alpha=order)
        if name in ("kl", "jsd") and not value:
            return cls(kind=name)
        raise ConfigError(f"unknown phi family {text!r} (expected kl, jsd or alpha:<value>)")

    def __str__(self) -> str:
        return f"alpha:{self.alpha:g}" if self.kind == "alpha" else self.kind


class GridSpec(BaseModel):
    """Sample points for the numerical conjugate supremum."""
    model_config = ConfigDict(frozen=True)

    t_min: float = Field(1e-6, gt=0.0)
    t_max: float = Field(10.0, gt=0.0)
    points: int = Field(100_000, ge=0)
    spacing: Literal["log", "linear"] = "log"


class LossKind(str, Enum):
    DPO = "dpo"
    DRDPO = "drdpo"
    CDPO = "cdpo"
    IPO = "ipo"
    RDPO = "rdpo"


class LossSpec(BaseModel):
    """Which preference loss to optimize, with its coefficients."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    kind: LossKind = Field(
        LossKind.DPO,
        validation_alias=AliasChoices("kind", "loss"),
        description="Loss family.",
    )
    beta: float = Field(0.1, gt=0.0, description="KL regularization coefficient of DPO.")
    beta_prime: float = Field(1.0, gt=0.0, description="Pairwise robustness temperature (Dr. DPO).")
    epsilon: float = Field(0.0, ge=0.0, lt=0.5, description="Assumed flip rate (cDPO, rDPO).")
    tau: float = Field(0.1, gt=0.0, description="IPO regularizer.")
    phi: PhiFamily = Field(
        default_factory=PhiFamily,
        description="Divergence behind the implicit reward beta * phi'(pi / pi_ref); KL is plain DPO.",
    )

    @field_validator("phi", mode="before")
    @classmethod
    def _phi_from_text(cls, value: Any) -> Any:
        return PhiFamily.parse(value) if isinstance(value, str) else value

    @field_serializer("phi")
    def _phi_as_text(self, phi: PhiFamily) -> str:
        return str(phi)

    @property
    def uses_beta_prime(self) -> bool:
        return self.kind is LossKind.DRDPO


class TaskSpec(BaseModel):
    """Synthetic Bradley-Terry task: latent reward and reference construction."""
    model_config = ConfigDict(frozen=True)

    space: PromptSpace = Field(
        default_factory=lambda: PromptSpace(num_prompts=8, completions_per_prompt=8)
    )
    reward_scale: float = Field(2.0, ge=0.0, description="Rewards drawn from U[-scale, scale].")
    ref_sharpness: float = Field(1.0, gt=0.0, description="Logit temperature lambda of the reference.")
    seed: int = Field(0, description="Seed of the reward / preference / test streams.")


class NoiseSpec(BaseModel):
    """Pointwise (reference corruption) and pairwise (label flip) noise."""
    model_config = ConfigDict(frozen=True)

    pointwise_rho: Rate = Field(0.0, description="Mix towards the reward-inverted reference.")
    pairwise_p: Rate = Field(0.0, description="Probability of swapping chosen and rejected.")
    seed: int = Field(0, description="Seed of the flip stream.")


class TrainConfig(BaseModel):
    """Plain gradient descent on tabular logits."""
    model_config = ConfigDict(frozen=True)

    loss: LossSpec = Field(default_factory=LossSpec)
    learning_rate: float = Field(0.05, ge=0.0, description="Fixed step size.")
    steps: int = Field(2000, ge=1)
    batch_size: int = Field(0, ge=0, description="0 means full batch.")
    seed: int = Field(0, description="Seed of the minibatch permutation stream.")
    record_every: int = Field(100, ge=1)


class BoundInputs(BaseModel):
    """Inputs of the finite-sample generalization bound.

    Field types are enforced on construction; the ranges are checked by
    ``check``, which raises ConfigError rather than a validation error.
    """
    model_config = ConfigDict(frozen=True)

    delta: float = Field(..., description="Failure probability, in (0, 1).")
    n: int = Field(..., description="Sample count N >= 1.")
    beta_prime: float = Field(..., description="Robustness temperature, > 0.")
    a: float = Field(..., description="Lower end of the per-pair loss range.")
    b: float = Field(..., description="Upper end of the per-pair loss range.")

    def check(self) -> "BoundInputs":
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.n < 1:
            raise ConfigError(f"the bound needs at least one sample, got n={self.n}")
        if not self.beta_prime > 0.0:
            raise ConfigError(f"beta_prime must be positive, got {self.beta_prime}")
        if self.a > self.b:
            raise ConfigError(f"range [a, b] is empty: a={self.a} > b={self.b}")
        return self


class BoundReport(BaseModel):
    """The bound evaluated on a trained policy's pairs."""

    h_min: float = Field(..., description="Lowest h over the pairs, after clamping at the floor.")
    h_max: float = Field(..., description="Upper end of the h range (0).")
    delta: float
    n: int
    beta_prime: float
    value: float = Field(..., ge=0.0, description="Bound on the gap to the ideal-distribution loss.")


class WeightStats(BaseModel):
    step: int
    min: float
    max: float
    mean: float


class TrainReport(BaseModel):
    """Loss trajectory and final evaluation metrics of one training run."""

    loss: LossSpec
    loss_curve: List[Tuple[int, float]] = Field(..., description="(step, full-batch loss).")
    final_loss: float
    final_preference_accuracy: float = Field(..., ge=0.0, le=1.0)
    final_expected_reward: Optional[float] = None
    final_kl: float = Field(..., ge=0.0)
    weight_stats: Optional[List[WeightStats]] = Field(
        None, description="Gibbs weight (min, max, mean) per recorded step, Dr. DPO only."
    )
    bound: Optional[BoundReport] = Field(
        None, description="Finite-sample bound at the final policy, Dr. DPO only."
    )


class RunPoint(BaseModel):
    """One cell of a sweep's cross product."""
    model_config = ConfigDict(frozen=True)

    index: int
    loss: LossSpec
    flip_rate: float
    pointwise_rho: float
    seed: int


class SweepSpec(BaseModel):
    """Cross product of losses, coefficients, noise levels and seeds."""
    model_config = ConfigDict(frozen=True)

    betas: List[Positive] = Field(..., min_length=1)
    beta_primes: List[Positive] = Field(..., min_length=1)
    flip_rates: List[Rate] = Field(..., min_length=1)
    pointwise_rhos: List[Rate] = Field(..., min_length=1)
    losses: List[LossKind] = Field(..., min_length=1)
    phis: List[PhiFamily] = Field(default_factory=lambda: [PhiFamily()], min_length=1)
    seeds: List[int] = Field(..., min_length=1)
    task: TaskSpec = Field(default_factory=TaskSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    n_train: int = Field(2000, ge=1)
    n_test: int = Field(2000, ge=1)

    @field_validator("phis", mode="before")
    @classmethod
    def _phis_from_text(cls, value: Any) -> Any:
        if isinstance(value, (list, tuple)):
            return [PhiFamily.parse(v) if isinstance(v, str) else v for v in value]
        return value

    @field_serializer("phis")
    def _phis_as_text(self, phis: List[PhiFamily]) -> List[str]:
        return [str(phi) for phi in phis]

    def points(self) -> Iterator[RunPoint]:
        """Runs in axis order (loss, phi, beta, beta', flip, rho, seed). Losses without beta' take only the first beta'."""
        index = 0
        for kind, phi, beta in product(self.losses, self.phis, self.betas):
            beta_primes = self.beta_primes if kind is LossKind.DRDPO else self.beta_primes[:1]
            for beta_prime, flip, rho, seed in product(
                beta_primes, self.flip_rates, self.pointwise_rhos, self.seeds
            ):
                loss = self.train.loss.model_copy(
                    update={"kind": kind, "phi": phi, "beta": beta, "beta_prime": beta_prime}
                )
                yield RunPoint(index=index, loss=loss, flip_rate=flip, pointwise_rho=rho, seed=seed)
                index += 1

    @property
    def size(self) -> int:
        return sum(1 for _ in self.points())
