"""Synthetic workload generation: request streams with per-token true values,
classes, and surrogate attention features.

Values land in ValueVector.accuracy with mean MEAN_TOKEN_VALUE; the coefficient
of variation is the heterogeneity knob. The planted_early_instruction kind puts
the top-value token at each request's head and gives it suppressed surrogate
attention mass: the local-coherence bias construction that recency- and
attention-driven proxies mistake for low value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import CostVector, TokenClass, TokenUnit, ValueVector
from .valuation import UnitContext

MEAN_TOKEN_VALUE = 1.0
OUTPUT_TOKENS_PER_REQUEST = 16
FILLER_JITTER_SIGMA = 0.2


class ValueDist(str, Enum):
    UNIFORM = "uniform"
    LOGNORMAL = "lognormal"
    PLANTED_EARLY_INSTRUCTION = "planted_early_instruction"


@dataclass(frozen=True)
class WorkloadParams:
    """Arrival process, request shape, and token-value heterogeneity target."""

    rate: float
    tokens_per_request: int | tuple[int, int]
    value_cv: float
    value_dist: ValueDist
    attention_bias: float = 0.5
    pressure: float = 0.8

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ValueError("workload rate must be > 0")
        if self.value_cv < 0:
            raise ValueError("value CV must be >= 0")
        if not (0.0 <= self.attention_bias <= 1.0):
            raise ValueError("attention_bias out of [0,1]")
        if not (0.0 <= self.pressure <= 2.0):
            raise ValueError("pressure out of [0,2]")
        if self.value_dist is ValueDist.UNIFORM and self.value_cv > 0:
            raise ValueError(
                "uniform value distribution cannot represent CV > 0; use lognormal"
            )
        if isinstance(self.tokens_per_request, tuple):
            lo, hi = self.tokens_per_request
            if not (1 <= lo <= hi):
                raise ValueError("tokens_per_request range must satisfy 1 <= lo <= hi")
        elif self.tokens_per_request < 1:
            raise ValueError("tokens_per_request must be >= 1")


@dataclass(frozen=True)
class Request:
    request_id: int
    arrival_step: int
    tokens: tuple[TokenUnit, ...]
    contexts: dict[int, UnitContext]
    true_values: dict[int, float]
    output_budget: int


def draw_prompt_values(
    dist: ValueDist, cv: float, count: int, stream: np.random.Generator
) -> np.ndarray:
    """Per-token true values with target mean MEAN_TOKEN_VALUE and CV."""
    mean = MEAN_TOKEN_VALUE
    if dist is ValueDist.UNIFORM:
        return np.full(count, mean)
    if dist is ValueDist.LOGNORMAL:
        if cv == 0:
            return np.full(count, mean)
        sigma2 = math.log(1.0 + cv * cv)
        mu = math.log(mean) - sigma2 / 2.0
        return stream.lognormal(mu, math.sqrt(sigma2), count)
    # Planted head: two-point head/filler split parameterized by CV, with fixed
    # filler jitter so replicate seeds differ. The head is floored strictly
    # above the request's filler maximum, so argmax is the first token.
    if count == 1:
        return np.array([mean * (1.0 + cv)])
    p = 1.0 / count
    head_target = mean * (1.0 + cv * math.sqrt((1.0 - p) / p))
    filler_base = max(0.05 * mean, mean * (1.0 - cv * math.sqrt(p / (1.0 - p))))
    fillers = filler_base * np.exp(stream.normal(0.0, FILLER_JITTER_SIGMA, count - 1))
    head = max(head_target, 1.05 * float(fillers.max()))
    return np.concatenate([[head], fillers])


def attention_masses(
    dist: ValueDist, bias: float, count: int
) -> np.ndarray:
    """Surrogate attention mass: recency-increasing, with the planted head suppressed."""
    if count == 1:
        positions = np.zeros(1)
    else:
        positions = np.arange(count) / (count - 1)
    mass = 0.5 + 0.5 * positions
    if dist is ValueDist.PLANTED_EARLY_INSTRUCTION:
        mass[0] = 0.5 * (1.0 - bias)
    return mass


def _token_classes(dist: ValueDist, count: int) -> list[TokenClass]:
    if dist is ValueDist.PLANTED_EARLY_INSTRUCTION:
        return [TokenClass.INPUT] + [TokenClass.RETRIEVAL] * (count - 1)
    return [TokenClass.INPUT] * count


def _request_size(params: WorkloadParams, stream: np.random.Generator) -> int:
    if isinstance(params.tokens_per_request, tuple):
        lo, hi = params.tokens_per_request
        return int(stream.integers(lo, hi + 1))
    return int(params.tokens_per_request)


def build_request(
    request_id: int,
    arrival_step: int,
    size: int,
    params: WorkloadParams,
    stream: np.random.Generator,
    first_unit_id: int,
) -> Request:
    values = draw_prompt_values(params.value_dist, params.value_cv, size, stream)
    masses = attention_masses(params.value_dist, params.attention_bias, size)
    classes = _token_classes(params.value_dist, size)
    tokens: list[TokenUnit] = []
    contexts: dict[int, UnitContext] = {}
    true_values: dict[int, float] = {}
    for pos in range(size):
        uid = first_unit_id + pos
        tokens.append(
            TokenUnit(
                unit_id=uid,
                token_class=classes[pos],
                value_components=ValueVector(accuracy=float(values[pos])),
                cost_components=CostVector(memory=1),
                arrival_step=arrival_step,
            )
        )
        contexts[uid] = UnitContext(
            step=arrival_step,
            position_in_request=pos,
            attention_mass=float(masses[pos]),
        )
        true_values[uid] = float(values[pos])
    return Request(
        request_id=request_id,
        arrival_step=arrival_step,
        tokens=tuple(tokens),
        contexts=contexts,
        true_values=true_values,
        output_budget=OUTPUT_TOKENS_PER_REQUEST,
    )


def generate_workload(
    params: WorkloadParams, horizon: int, stream: np.random.Generator
) -> list[Request]:
    """Poisson request arrivals over `horizon` steps, one Request per arrival."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    requests: list[Request] = []
    next_unit = 0
    next_request = 0
    for step in range(horizon):
        n_arrivals = int(stream.poisson(params.rate))
        for _ in range(n_arrivals):
            size = _request_size(params, stream)
            req = build_request(next_request, step, size, params, stream, next_unit)
            requests.append(req)
            next_unit += size
            next_request += 1
    return requests
