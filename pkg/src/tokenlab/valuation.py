"""Ground-truth token valuation (counterfactual, Shapley), cheap proxies, and
decision-calibrated proxy evaluation.

Coalition utilities are deterministic set functions F with F(empty) = 0. Exact
attribution enumerates coalitions (hard-capped at 16 units); the Monte Carlo
path samples uniform random permutations, one full marginal sweep each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .core import (
    Budgets,
    CostVector,
    ObjectiveWeights,
    TokenClass,
    TokenUnit,
    ValueVector,
    positive_utility,
    scalarized_cost,
)

EXACT_ENUMERATION_CAP = 16
TABLE_CAP = 20


class UtilityKind(str, Enum):
    ADDITIVE = "additive"
    PLANTED_SUBSET = "planted_subset"
    PAIRWISE_INTERACTION = "pairwise_interaction"
    COVERAGE = "coverage"


class Provenance(str, Enum):
    ORACLE = "oracle"
    SHAPLEY_EXACT = "shapley_exact"
    SHAPLEY_MC = "shapley_mc"
    LEAVE_ONE_OUT = "leave_one_out"
    RECENCY = "recency"
    POSITION = "position"
    ATTENTION_SURROGATE = "attention_surrogate"
    STATIC_PREDICTOR = "static_predictor"


EXACT_PROVENANCES = frozenset(
    {Provenance.ORACLE, Provenance.SHAPLEY_EXACT, Provenance.LEAVE_ONE_OUT}
)
PROXY_PROVENANCES = frozenset(
    {
        Provenance.RECENCY,
        Provenance.POSITION,
        Provenance.ATTENTION_SURROGATE,
        Provenance.STATIC_PREDICTOR,
    }
)


@dataclass(frozen=True)
class UtilityFunction:
    """A coalition utility F(S) over token ids.

    Parameters are positional over ``ids`` (strictly increasing). Evaluation is
    pure: the same subset always yields the same value, and F(empty) = 0 for
    every kind.
    """

    kind: UtilityKind
    ids: tuple[int, ...]
    weights: tuple[float, ...] = ()
    planted: frozenset[int] = frozenset()
    payoff: float = 1.0
    synergy: tuple[tuple[float, ...], ...] = ()
    element_sets: tuple[frozenset[int], ...] = ()
    element_weights: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if list(self.ids) != sorted(set(self.ids)):
            raise ValueError("UtilityFunction.ids must be strictly increasing and unique")
        n = len(self.ids)
        if self.kind in (UtilityKind.ADDITIVE, UtilityKind.PAIRWISE_INTERACTION):
            if len(self.weights) != n:
                raise ValueError(f"expected {n} weights, got {len(self.weights)}")
        if self.kind is UtilityKind.PLANTED_SUBSET and not self.planted <= set(self.ids):
            raise ValueError("planted set must be a subset of the ground set")
        if self.kind is UtilityKind.PAIRWISE_INTERACTION:
            if len(self.synergy) != n or any(len(row) != n for row in self.synergy):
                raise ValueError("synergy must be an n x n matrix")
            for i in range(n):
                for j in range(n):
                    if self.synergy[i][j] != self.synergy[j][i]:
                        raise ValueError("synergy matrix must be symmetric")
        if self.kind is UtilityKind.COVERAGE:
            if len(self.element_sets) != n:
                raise ValueError(f"expected {n} element sets, got {len(self.element_sets)}")
            n_elem = len(self.element_weights)
            for s in self.element_sets:
                if any(e < 0 or e >= n_elem for e in s):
                    raise ValueError("element set references an unknown element index")

    @property
    def position_of(self) -> dict[int, int]:
        return {uid: pos for pos, uid in enumerate(self.ids)}

    def value(self, members: Iterable[int]) -> float:
        """F(S) for a subset S of the ground set (not validated; see eval_utility)."""
        pos_of = self.position_of
        positions = sorted(pos_of[uid] for uid in members)
        if self.kind is UtilityKind.ADDITIVE:
            return float(sum(self.weights[p] for p in positions))
        if self.kind is UtilityKind.PLANTED_SUBSET:
            hits = sum(1 for p in positions if self.ids[p] in self.planted)
            return float(self.payoff * hits)
        if self.kind is UtilityKind.PAIRWISE_INTERACTION:
            total = sum(self.weights[p] for p in positions)
            for a in range(len(positions)):
                for b in range(a + 1, len(positions)):
                    total += self.synergy[positions[a]][positions[b]]
            return float(total)
        covered: set[int] = set()
        for p in positions:
            covered |= self.element_sets[p]
        return float(sum(self.element_weights[e] for e in sorted(covered)))

    def table(self) -> np.ndarray:
        """F over all 2^n subsets, indexed by position bitmask. n <= 20 only."""
        n = len(self.ids)
        if n > TABLE_CAP:
            raise ValueError(f"enumeration table capped at n={TABLE_CAP} (got {n})")
        size = 1 << n
        out = np.zeros(size, dtype=np.float64)
        if self.kind in (UtilityKind.ADDITIVE, UtilityKind.PLANTED_SUBSET):
            if self.kind is UtilityKind.ADDITIVE:
                w = np.array(self.weights, dtype=np.float64)
            else:
                w = np.array(
                    [self.payoff if uid in self.planted else 0.0 for uid in self.ids]
                )
            for i in range(n):
                half = 1 << i
                out[half : 2 * half] = out[:half] + w[i]
        elif self.kind is UtilityKind.PAIRWISE_INTERACTION:
            for i in range(n):
                half = 1 << i
                syn_mass = np.zeros(half, dtype=np.float64)
                for j in range(i):
                    jb = 1 << j
                    syn_mass[jb : 2 * jb] = syn_mass[:jb] + self.synergy[i][j]
                out[half : 2 * half] = out[:half] + self.weights[i] + syn_mass
        else:
            unit_masks = np.array(
                [sum(1 << e for e in s) for s in self.element_sets], dtype=np.uint64
            )
            union = np.zeros(size, dtype=np.uint64)
            for i in range(n):
                half = 1 << i
                union[half : 2 * half] = union[:half] | unit_masks[i]
            for e, we in enumerate(self.element_weights):
                out += we * ((union >> np.uint64(e)) & np.uint64(1)).astype(np.float64)
        return out


def eval_utility(utility, members: Iterable[int]) -> float:
    """Evaluate F(S); raises if S contains an id outside the ground set."""
    subset = frozenset(members)
    ground = set(utility.ids)
    if not subset <= ground:
        bad = sorted(subset - ground)
        raise ValueError(f"subset contains ids outside the ground set: {bad}")
    return utility.value(subset)


@dataclass(frozen=True, slots=True)
class ValueEstimate:
    """One per-unit value estimate plus the sensing cost its production charged."""

    unit_id: int
    mean: float
    variance: float
    provenance: Provenance
    sensing_cost_charged: float

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise ValueError(f"ValueEstimate.variance must be >= 0 (got {self.variance})")
        if self.sensing_cost_charged < 0:
            raise ValueError("ValueEstimate.sensing_cost_charged must be >= 0")
        if self.provenance in EXACT_PROVENANCES and self.variance != 0.0:
            raise ValueError(f"exact provenance {self.provenance} must have variance 0")


DEFAULT_UNIT_COST: dict[Provenance, float] = {
    Provenance.ORACLE: 1.0,
    Provenance.SHAPLEY_EXACT: 8.0,
    Provenance.SHAPLEY_MC: 2.0,
    Provenance.LEAVE_ONE_OUT: 1.0,
    Provenance.RECENCY: 0.05,
    Provenance.POSITION: 0.05,
    Provenance.ATTENTION_SURROGATE: 0.1,
    Provenance.STATIC_PREDICTOR: 0.0,
}


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to run and what each valued unit costs (T_value accounting)."""

    kind: Provenance
    unit_cost: float
    samples: int = 256
    decay: float = 0.5
    attention_scale: float = 1.0
    position_bucket: int = 4
    predictor_table: Mapping[tuple[TokenClass, int], float] | None = None
    amortized_charge: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is Provenance.STATIC_PREDICTOR:
            if self.unit_cost < 0:
                raise ValueError("static_predictor unit_cost must be >= 0")
        elif self.unit_cost <= 0:
            raise ValueError(f"declared unit_cost must be > 0 for {self.kind} estimators")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.decay < 0:
            raise ValueError("decay must be >= 0")
        if self.position_bucket < 1:
            raise ValueError("position_bucket must be >= 1")
        if self.amortized_charge < 0:
            raise ValueError("amortized_charge must be >= 0")

    @staticmethod
    def with_defaults(kind: Provenance, **overrides) -> "EstimatorSpec":
        params = {"unit_cost": DEFAULT_UNIT_COST[kind]}
        params.update(overrides)
        return EstimatorSpec(kind=kind, **params)


@dataclass(frozen=True, slots=True)
class UnitContext:
    """Observable features a proxy may read; never contains true values."""

    step: int = 0
    position_in_request: int = 0
    attention_mass: float = 0.0


def marginal_value_oracle(
    utility,
    members: Iterable[int],
    unit_id: int,
    weights: ObjectiveWeights,
    cost: CostVector,
) -> float:
    """Counterfactual net value of a unit: F(S) - F(S \\ {i}) - lambda * scalarized cost."""
    subset = frozenset(members)
    if unit_id not in subset:
        raise ValueError(f"unit {unit_id} is not a member of the coalition")
    gross = eval_utility(utility, subset) - eval_utility(utility, subset - {unit_id})
    return gross - weights.lambda_exchange * scalarized_cost(cost, weights)


_POPCOUNT_CACHE: dict[int, np.ndarray] = {}


def _popcounts(n: int) -> np.ndarray:
    if n not in _POPCOUNT_CACHE:
        _POPCOUNT_CACHE[n] = np.bitwise_count(np.arange(1 << n, dtype=np.uint32))
    return _POPCOUNT_CACHE[n]


def _subset_table(utility) -> np.ndarray:
    if isinstance(utility, UtilityFunction):
        return utility.table()
    ids = utility.ids
    n = len(ids)
    out = np.empty(1 << n)
    for mask in range(1 << n):
        out[mask] = utility.value({ids[i] for i in range(n) if (mask >> i) & 1})
    return out


def shapley_exact(utility) -> np.ndarray:
    """Exact Shapley values by full coalition enumeration (ground set <= 16)."""
    n = len(utility.ids)
    if n > EXACT_ENUMERATION_CAP:
        raise ValueError(
            f"shapley_exact enumerates 2^n coalitions and is capped at n={EXACT_ENUMERATION_CAP} "
            f"(got {n}); use shapley_mc"
        )
    if n == 0:
        return np.zeros(0)
    table = _subset_table(utility)
    pc = _popcounts(n)
    fact = [math.factorial(k) for k in range(n + 1)]
    coef = np.array(
        [fact[s] * fact[n - s - 1] / fact[n] for s in range(n)], dtype=np.float64
    )
    masks = np.arange(1 << n, dtype=np.uint32)
    phi = np.zeros(n, dtype=np.float64)
    for i in range(n):
        bit = np.uint32(1 << i)
        without = masks[(masks & bit) == 0]
        phi[i] = float(np.sum(coef[pc[without]] * (table[without | bit] - table[without])))
    return phi


def shapley_mc(
    utility, samples: int, stream: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Permutation-sampling Shapley estimate with per-unit standard errors.

    One full marginal sweep per uniform random permutation; unbiased, and each
    sweep's marginals telescope to F(N) - F(empty) exactly.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    n = len(utility.ids)
    if n == 0:
        return np.zeros(0), np.zeros(0)
    sums = np.zeros(n)
    sq_sums = np.zeros(n)
    marg = np.zeros(n)
    for _ in range(samples):
        perm = stream.permutation(n)
        members: set[int] = set()
        prev = 0.0
        for pos in perm:
            members.add(utility.ids[pos])
            cur = eval_utility(utility, members)
            marg[pos] = cur - prev
            prev = cur
        sums += marg
        sq_sums += marg * marg
    mean = sums / samples
    if samples > 1:
        var = np.maximum(0.0, (sq_sums - samples * mean * mean) / (samples - 1))
        stderr = np.sqrt(var / samples)
    else:
        stderr = np.zeros(n)
    return mean, stderr


def leave_one_out(utility) -> np.ndarray:
    """v_i = F(N) - F(N \\ {i}); performs exactly n+1 utility evaluations."""
    ids = utility.ids
    full = frozenset(ids)
    total = eval_utility(utility, full)
    return np.array([total - eval_utility(utility, full - {uid}) for uid in ids])


def nonadditivity_gap(utility) -> float:
    """|F(N) - sum of leave-one-out values|; zero exactly for additive F."""
    n = len(utility.ids)
    if n > EXACT_ENUMERATION_CAP:
        raise ValueError(f"nonadditivity_gap capped at n={EXACT_ENUMERATION_CAP} (got {n})")
    total = eval_utility(utility, frozenset(utility.ids))
    return abs(total - float(np.sum(leave_one_out(utility))))


def aggregate_utility(values: ValueVector, costs: CostVector, weights: ObjectiveWeights) -> float:
    """Scalar objective: alpha-weighted utilities minus lambda-weighted costs."""
    return positive_utility(values, weights) - scalarized_cost(costs, weights)


def proxy_value(spec: EstimatorSpec, unit: TokenUnit, context: UnitContext) -> ValueEstimate:
    """Score one unit with a cheap proxy; charges the spec's declared unit cost."""
    if spec.kind not in PROXY_PROVENANCES:
        raise ValueError(f"proxy_value requires a proxy estimator kind, got {spec.kind}")
    if spec.kind is Provenance.RECENCY:
        age = max(0, context.step - unit.arrival_step)
        score = math.exp(-spec.decay * age)
    elif spec.kind is Provenance.POSITION:
        # Fixed positional prior favoring request-initial tokens.
        score = 1.0 / (1.0 + context.position_in_request)
    elif spec.kind is Provenance.ATTENTION_SURROGATE:
        score = spec.attention_scale * context.attention_mass
    else:
        if spec.predictor_table is None:
            raise ValueError("static_predictor estimator has no loaded table")
        bucket = context.position_in_request // spec.position_bucket
        key = (unit.token_class, bucket)
        if key not in spec.predictor_table:
            # Unseen (class, bucket) cells fall back to the coarsest known bucket.
            known = [b for (cls, b) in spec.predictor_table if cls is unit.token_class]
            key = (unit.token_class, max((b for b in known if b <= bucket), default=-1))
        score = float(spec.predictor_table.get(key, 0.0))
    return ValueEstimate(
        unit_id=unit.unit_id,
        mean=float(score),
        variance=0.0,
        provenance=spec.kind,
        sensing_cost_charged=spec.unit_cost,
    )


def fit_static_predictor(
    labeled: Iterable["LabeledUnit"], position_bucket: int = 4
) -> dict[tuple[TokenClass, int], float]:
    """Freeze a (class, position-bucket) -> mean true value lookup from a calibration run."""
    sums: dict[tuple[TokenClass, int], list[float]] = {}
    for lu in labeled:
        bucket = lu.context.position_in_request // position_bucket
        sums.setdefault((lu.unit.token_class, bucket), []).append(lu.true_value)
    return {key: float(np.mean(vals)) for key, vals in sums.items()}


@dataclass(frozen=True, slots=True)
class LabeledUnit:
    """A unit with its observable context and its (hidden from policies) true value."""

    unit: TokenUnit
    true_value: float
    context: UnitContext


class DecisionRule(str, Enum):
    TOP_K_SELECTION = "top_k_selection"
    EVICTION = "eviction"
    THRESHOLD_ADMISSION = "threshold_admission"


def _scores_for(spec: EstimatorSpec, corpus: list[LabeledUnit]) -> list[float]:
    if spec.kind in PROXY_PROVENANCES:
        return [proxy_value(spec, lu.unit, lu.context).mean for lu in corpus]
    # Exact estimator kinds read the labeled truth (the corpus is additive by construction).
    return [lu.true_value for lu in corpus]


def rank_normalize(scores: Iterable[float], ids: Iterable[int]) -> np.ndarray:
    """Map scores to [0,1] by rank; ties break by lowest unit id (deterministic)."""
    pairs = list(zip(scores, ids))
    order = sorted(range(len(pairs)), key=lambda k: (pairs[k][0], pairs[k][1]))
    out = np.zeros(len(pairs))
    denom = max(1, len(pairs) - 1)
    for rank, k in enumerate(order):
        out[k] = rank / denom
    return out


def _apply_rule(
    rule: DecisionRule,
    corpus: list[LabeledUnit],
    scores: list[float],
    budgets: Budgets,
    threshold: float,
) -> set[int]:
    ids = [lu.unit.unit_id for lu in corpus]
    if rule is DecisionRule.TOP_K_SELECTION:
        k = min(len(corpus), int(budgets.memory)) if math.isfinite(budgets.memory) else len(corpus)
        by_score_desc = sorted(range(len(corpus)), key=lambda j: (-scores[j], ids[j]))
        return {ids[j] for j in by_score_desc[:k]}
    if rule is DecisionRule.EVICTION:
        keep = min(len(corpus), int(budgets.memory)) if math.isfinite(budgets.memory) else len(corpus)
        by_score_asc = sorted(range(len(corpus)), key=lambda j: (scores[j], ids[j]))
        evicted = {ids[j] for j in by_score_asc[: len(corpus) - keep]}
        return {uid for uid in ids if uid not in evicted}
    normalized = rank_normalize(scores, ids)
    return {ids[k] for k in range(len(corpus)) if normalized[k] > threshold}


def decision_regret_of_proxy(
    spec: EstimatorSpec,
    rule: DecisionRule,
    corpus: list[LabeledUnit],
    budgets: Budgets,
    threshold: float = 0.5,
) -> float:
    """True-value objective gap between the rule run on truth and run on the proxy.

    Units carry unit memory footprints so the budget is a retention count;
    with that, each rule driven by the true values is optimal within its own
    family and the regret is always >= 0.
    """
    for lu in corpus:
        if lu.unit.cost_components.memory != 1:
            raise ValueError("decision_regret_of_proxy expects unit memory footprints")
    truth = [lu.true_value for lu in corpus]
    proxy_scores = _scores_for(spec, corpus)
    chosen_true = _apply_rule(rule, corpus, truth, budgets, threshold)
    chosen_proxy = _apply_rule(rule, corpus, proxy_scores, budgets, threshold)
    value = {lu.unit.unit_id: lu.true_value for lu in corpus}
    obj_true = sum(value[uid] for uid in chosen_true)
    obj_proxy = sum(value[uid] for uid in chosen_proxy)
    return obj_true - obj_proxy


@dataclass(frozen=True, slots=True)
class ClassBias:
    """Signed rank-scale bias of a proxy on one token class (positive = overvalued)."""

    bias: float
    stderr: float
    count: int


def bias_profile(spec: EstimatorSpec, corpus: list[LabeledUnit]) -> dict[TokenClass, ClassBias]:
    """Per-class mean signed error of rank-normalized proxy scores vs true values."""
    if not corpus:
        return {}
    ids = [lu.unit.unit_id for lu in corpus]
    proxy_norm = rank_normalize(_scores_for(spec, corpus), ids)
    true_norm = rank_normalize([lu.true_value for lu in corpus], ids)
    diffs: dict[TokenClass, list[float]] = {}
    for k, lu in enumerate(corpus):
        diffs.setdefault(lu.unit.token_class, []).append(float(proxy_norm[k] - true_norm[k]))
    profile: dict[TokenClass, ClassBias] = {}
    for cls, vals in diffs.items():
        arr = np.array(vals)
        stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        profile[cls] = ClassBias(bias=float(arr.mean()), stderr=stderr, count=len(arr))
    return profile
