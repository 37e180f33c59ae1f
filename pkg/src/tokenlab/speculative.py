"""Expected-net-value economics of speculative token production.

A draft proposal is an uncertain asset: its net value is the acceptance-
weighted saving minus draft and verification costs, plus any exogenous
informational value. Acceptance is modeled with independent per-position
draws; the accepted prefix ends at the first rejection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, slots=True)
class SpecProposal:
    """One draft block: acceptance probability, value if accepted, and costs."""

    draft_length: int
    p_acc: float
    value_if_accepted: float
    c_draft: float
    c_verify: float
    info_value: float = 0.0

    def __post_init__(self) -> None:
        if self.draft_length < 1:
            raise ValueError("draft_length must be >= 1")
        if not (0.0 <= self.p_acc <= 1.0):
            raise ValueError(f"p_acc out of [0,1] (got {self.p_acc})")
        if self.c_draft < 0 or self.c_verify < 0:
            raise ValueError("draft and verify costs must be >= 0")


@dataclass(frozen=True, slots=True)
class SpecCostModel:
    """Per-token draft cost, per-round verification cost, per-token target saving."""

    draft_cost_per_token: float
    verify_cost: float
    target_cost_per_token: float

    def __post_init__(self) -> None:
        if min(self.draft_cost_per_token, self.verify_cost, self.target_cost_per_token) < 0:
            raise ValueError("cost model components must be >= 0")


@dataclass(frozen=True, slots=True)
class SpecRoundOutcome:
    accepted_length: int
    realized_cost: float
    realized_saving: float

    @property
    def realized_net(self) -> float:
        return self.realized_saving - self.realized_cost


def env(proposal: SpecProposal) -> float:
    """Expected net value: p_acc * v - c_draft - c_verify + I."""
    return (
        proposal.p_acc * proposal.value_if_accepted
        - proposal.c_draft
        - proposal.c_verify
        + proposal.info_value
    )


def decide_speculate(proposal: SpecProposal, threshold: float = 0.0) -> bool:
    """Speculate iff the expected net value strictly exceeds the threshold.

    Equality declines; a +inf threshold disables speculation entirely.
    """
    return env(proposal) > threshold


def expected_accepted_length(per_position_probs: Sequence[float]) -> float:
    """Closed form E[accepted prefix length] = sum_j prod_{i<=j} p_i."""
    total = 0.0
    running = 1.0
    for p in per_position_probs:
        running *= p
        total += running
    return total


def proposal_from_position_model(
    per_position_probs: Sequence[float],
    costs: SpecCostModel,
    info_value: float = 0.0,
) -> SpecProposal:
    """Aggregate a per-position acceptance model into a single proposal.

    v is the full-draft saving and p_acc the mean accepted fraction, so that
    env equals the long-run mean realized net of always speculating under the
    same acceptance model.
    """
    if not per_position_probs:
        raise ValueError("per-position model must cover at least one draft token")
    for p in per_position_probs:
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"per-position probability out of [0,1]: {p}")
    length = len(per_position_probs)
    full_saving = length * costs.target_cost_per_token
    mean_fraction = expected_accepted_length(per_position_probs) / length
    return SpecProposal(
        draft_length=length,
        p_acc=mean_fraction,
        value_if_accepted=full_saving,
        c_draft=costs.draft_cost_per_token * length,
        c_verify=costs.verify_cost,
        info_value=info_value,
    )


def simulate_spec_round(
    per_position_probs: Sequence[float],
    costs: SpecCostModel,
    stream: np.random.Generator,
) -> SpecRoundOutcome:
    """Draw one round: accepted prefix ends at the first per-position rejection."""
    length = len(per_position_probs)
    if length < 1:
        raise ValueError("draft_length must be >= 1")
    draws = stream.random(length)
    accepted = 0
    for j in range(length):
        if draws[j] < per_position_probs[j]:
            accepted += 1
        else:
            break
    realized_cost = costs.draft_cost_per_token * length + costs.verify_cost
    realized_saving = accepted * costs.target_cost_per_token
    return SpecRoundOutcome(
        accepted_length=accepted,
        realized_cost=realized_cost,
        realized_saving=realized_saving,
    )
