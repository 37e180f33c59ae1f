"""Domain types, deterministic randomness, and validation shared by every module.

All budget arithmetic runs on abstract cost/time units, never wall-clock, so
that identical seeds reproduce identical artifacts on any platform. Optional
budgets default to the ``UNBOUNDED`` sentinel (+inf), never to zero.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

UNBOUNDED = float("inf")


class TokenClass(str, Enum):
    """The six economic token categories tracked by the lab."""

    INPUT = "input"
    OUTPUT = "output"
    REASONING = "reasoning"
    RETRIEVAL = "retrieval"
    TOOL = "tool"
    SPECULATIVE = "speculative"


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite (got {value})")


@dataclass(frozen=True, slots=True)
class ValueVector:
    """Per-token utility components (dimensionless)."""

    accuracy: float = 0.0
    safety: float = 0.0
    format: float = 0.0
    user: float = 0.0

    def __post_init__(self) -> None:
        for name in ("accuracy", "safety", "format", "user"):
            _require_finite(f"ValueVector.{name}", getattr(self, name))


@dataclass(frozen=True, slots=True)
class CostVector:
    """Per-token resource costs. Memory is an integer footprint in memory units."""

    compute: float = 0.0
    memory: int = 0
    latency: float = 0.0
    monetary: float = 0.0

    def __post_init__(self) -> None:
        if not isinstance(self.memory, int):
            raise ValueError(f"CostVector.memory must be an integer (got {self.memory!r})")
        for name in ("compute", "memory", "latency", "monetary"):
            v = getattr(self, name)
            _require_finite(f"CostVector.{name}", v)
            if v < 0:
                raise ValueError(f"CostVector.{name} must be >= 0 (got {v})")


@dataclass(frozen=True, slots=True)
class ObjectiveWeights:
    """Weights of the scalar service objective plus the utility/cost exchange rate."""

    alpha_acc: float = 1.0
    alpha_safety: float = 1.0
    alpha_format: float = 1.0
    alpha_user: float = 1.0
    lambda_lat: float = 0.0
    lambda_mem: float = 0.0
    lambda_comp: float = 0.0
    lambda_exchange: float = 1.0

    def __post_init__(self) -> None:
        for name in (
            "alpha_acc",
            "alpha_safety",
            "alpha_format",
            "alpha_user",
            "lambda_lat",
            "lambda_mem",
            "lambda_comp",
            "lambda_exchange",
        ):
            v = getattr(self, name)
            _require_finite(f"ObjectiveWeights.{name}", v)
            if v < 0:
                raise ValueError(f"ObjectiveWeights.{name} must be >= 0 (got {v})")
        if self.alpha_acc == self.alpha_safety == self.alpha_format == self.alpha_user == 0:
            raise ValueError("ObjectiveWeights: at least one alpha must be > 0")


@dataclass(frozen=True, slots=True)
class Budgets:
    """Constraint set: memory/latency/hardware budgets, sensing budget tau, tail target."""

    memory: float = UNBOUNDED
    latency: float = UNBOUNDED
    hardware: float = UNBOUNDED
    tau: float = UNBOUNDED
    tail_latency: float = UNBOUNDED
    tail_delta: float = 1.0

    def __post_init__(self) -> None:
        for name in ("memory", "latency", "hardware", "tau", "tail_latency"):
            v = getattr(self, name)
            if math.isnan(v) or v < 0:
                raise ValueError(f"Budgets.{name} must be >= 0 (got {v})")
        if not (0.0 <= self.tail_delta <= 1.0):
            raise ValueError(f"Budgets.tail_delta out of [0,1] (got {self.tail_delta})")


@dataclass(frozen=True, slots=True)
class TokenUnit:
    """One economic decision unit."""

    unit_id: int
    token_class: TokenClass
    value_components: ValueVector
    cost_components: CostVector
    arrival_step: int = 0
    block_id: int | None = None

    def __post_init__(self) -> None:
        if self.unit_id < 0:
            raise ValueError(f"TokenUnit.unit_id must be >= 0 (got {self.unit_id})")
        if self.arrival_step < 0:
            raise ValueError(f"TokenUnit.arrival_step must be >= 0 (got {self.arrival_step})")
        if not isinstance(self.token_class, TokenClass):
            raise ValueError(f"TokenUnit.token_class must be a TokenClass (got {self.token_class!r})")


def scalarized_cost(cost: CostVector, weights: ObjectiveWeights) -> float:
    """Cost-side scalarization: lambda_lat*C_lat + lambda_mem*C_mem + lambda_comp*C_comp."""
    return (
        weights.lambda_lat * cost.latency
        + weights.lambda_mem * cost.memory
        + weights.lambda_comp * cost.compute
    )


def positive_utility(values: ValueVector, weights: ObjectiveWeights) -> float:
    """Utility-side scalarization: sum of alpha-weighted utility components."""
    return (
        weights.alpha_acc * values.accuracy
        + weights.alpha_safety * values.safety
        + weights.alpha_format * values.format
        + weights.alpha_user * values.user
    )


def derive_rng_stream(seed: int, label: str) -> np.random.Generator:
    """Derive an independent, reproducible random stream from (seed, label).

    Streams with distinct labels are statistically independent; the same
    (seed, label) pair reproduces the identical sequence on every platform.
    Adding a new labeled stream never perturbs draws from existing labels.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    label_words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    entropy = [seed & 0xFFFFFFFFFFFFFFFF, *label_words]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
