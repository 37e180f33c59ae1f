"""Offline optimal benchmark and the online policy family, with regret accounting.

The offline solver is exact: a knapsack DP over integer memory footprints for
additive utilities, exhaustive subset enumeration (n <= 20) otherwise. Online
policies see only arrived units and past records; true values stay hidden
behind the estimator interface unless the estimator is the oracle.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .core import Budgets, ObjectiveWeights, TokenUnit, scalarized_cost
from .valuation import (
    EstimatorSpec,
    Provenance,
    UnitContext,
    UtilityFunction,
    UtilityKind,
    ValueEstimate,
    eval_utility,
    leave_one_out,
    marginal_value_oracle,
    proxy_value,
    shapley_exact,
    shapley_mc,
)

EXHAUSTIVE_CAP = 20

STREAMING_ESTIMATORS = frozenset(
    {
        Provenance.ORACLE,
        Provenance.RECENCY,
        Provenance.POSITION,
        Provenance.ATTENTION_SURROGATE,
        Provenance.STATIC_PREDICTOR,
    }
)
BATCH_ESTIMATORS = frozenset(
    {Provenance.SHAPLEY_EXACT, Provenance.SHAPLEY_MC, Provenance.LEAVE_ONE_OUT}
)


class PolicyKind(str, Enum):
    GREEDY = "greedy"
    THRESHOLD_DYNAMIC = "threshold_dynamic"
    PRIMAL_DUAL = "primal_dual"
    RECENCY = "recency"
    LOOKAHEAD = "lookahead"


@dataclass(frozen=True)
class AllocationInstance:
    """Units in arrival order, the true coalition utility, and the constraint set."""

    units: tuple[TokenUnit, ...]
    utility: UtilityFunction
    budgets: Budgets
    weights: ObjectiveWeights

    def __post_init__(self) -> None:
        ids = [u.unit_id for u in self.units]
        if len(set(ids)) != len(ids):
            raise ValueError("unit ids must be unique within an instance")
        if set(ids) != set(self.utility.ids):
            raise ValueError("utility ground set must equal the unit id set")


@dataclass(frozen=True)
class AllocationAction:
    """Retained/admitted unit ids, plus per-unit resource levels for batch instances."""

    selected: frozenset[int]
    resource_levels: dict[int, int] | None = None

    def __post_init__(self) -> None:
        if self.resource_levels is not None:
            if any(level < 0 for level in self.resource_levels.values()):
                raise ValueError("resource levels must be >= 0")


@dataclass(frozen=True)
class PolicySpec:
    """Online policy family member and its declared per-step decision cost (T_alloc)."""

    kind: PolicyKind
    step_cost: float = 0.05
    initial_threshold: float = 0.0
    eta: float = 0.1
    lookahead: int = 2
    target_utilization: float = 0.9

    def __post_init__(self) -> None:
        if self.step_cost < 0:
            raise ValueError("step_cost must be >= 0")
        if not (0 <= self.lookahead <= 4):
            raise ValueError("lookahead horizon must be in [0, 4]")
        if self.kind is PolicyKind.PRIMAL_DUAL and self.eta <= 0:
            raise ValueError("primal_dual requires eta > 0")


@dataclass(frozen=True, slots=True)
class StepRecord:
    step: int
    arrived: tuple[int, ...]
    admitted: tuple[int, ...]
    evicted: tuple[int, ...]
    rejected: tuple[int, ...]
    memory_used: int
    realized_utility: float
    realized_cost: float
    latency: float
    sensing_cost: float
    alloc_cost: float
    flags: tuple[str, ...]


@dataclass(frozen=True)
class Trajectory:
    """Per-step history of one policy run plus the terminal true-utility objective."""

    records: tuple[StepRecord, ...]
    final_selected: frozenset[int]
    final_objective: float
    units_valued: int

    def __post_init__(self) -> None:
        for i, rec in enumerate(self.records):
            if rec.step != i:
                raise ValueError("trajectory records must be ordered by step")
            if rec.latency < 0:
                raise ValueError("latencies must be >= 0")


def selection_objective(instance: AllocationInstance, selected: frozenset[int]) -> float:
    """True objective of a selection: F(S) minus exchange-weighted scalarized costs."""
    gross = eval_utility(instance.utility, selected)
    w = instance.weights
    cost = sum(
        scalarized_cost(u.cost_components, w) for u in instance.units if u.unit_id in selected
    )
    return gross - w.lambda_exchange * cost


def _net_values(instance: AllocationInstance) -> dict[int, float]:
    """Additive per-unit net values (only meaningful for additive-family utilities)."""
    w = instance.weights
    pos = instance.utility.position_of
    out = {}
    for u in instance.units:
        p = pos[u.unit_id]
        if instance.utility.kind is UtilityKind.ADDITIVE:
            gross = instance.utility.weights[p]
        else:
            gross = instance.utility.payoff if u.unit_id in instance.utility.planted else 0.0
        out[u.unit_id] = gross - w.lambda_exchange * scalarized_cost(u.cost_components, w)
    return out


def _feasible(instance: AllocationInstance, selected: frozenset[int]) -> bool:
    mem = lat = hw = 0.0
    for u in instance.units:
        if u.unit_id in selected:
            mem += u.cost_components.memory
            lat += u.cost_components.latency
            hw += u.cost_components.compute
    b = instance.budgets
    return mem <= b.memory and lat <= b.latency and hw <= b.hardware


def _solve_exhaustive(instance: AllocationInstance) -> tuple[AllocationAction, float]:
    n = len(instance.units)
    if n > EXHAUSTIVE_CAP:
        raise ValueError(
            f"exhaustive benchmark capped at n={EXHAUSTIVE_CAP} (got {n}); "
            "non-additive instances beyond the cap are outside the regret-measured regime"
        )
    utility = instance.utility
    table = utility.table()
    w = instance.weights
    unit_of = {u.unit_id: u for u in instance.units}
    costs = np.array(
        [
            w.lambda_exchange * scalarized_cost(unit_of[uid].cost_components, w)
            for uid in utility.ids
        ]
    )
    mem = np.array([unit_of[uid].cost_components.memory for uid in utility.ids], dtype=np.int64)
    lat = np.array([unit_of[uid].cost_components.latency for uid in utility.ids])
    hw = np.array([unit_of[uid].cost_components.compute for uid in utility.ids])
    size = 1 << n
    cost_sum = np.zeros(size)
    mem_sum = np.zeros(size, dtype=np.int64)
    lat_sum = np.zeros(size)
    hw_sum = np.zeros(size)
    for i in range(n):
        half = 1 << i
        cost_sum[half : 2 * half] = cost_sum[:half] + costs[i]
        mem_sum[half : 2 * half] = mem_sum[:half] + mem[i]
        lat_sum[half : 2 * half] = lat_sum[:half] + lat[i]
        hw_sum[half : 2 * half] = hw_sum[:half] + hw[i]
    b = instance.budgets
    feasible = (mem_sum <= b.memory) & (lat_sum <= b.latency) & (hw_sum <= b.hardware)
    objective = table - cost_sum
    objective[~feasible] = -np.inf
    best = float(objective.max())
    tied = np.flatnonzero(objective == best)
    def mask_ids(mask: int) -> tuple[int, ...]:
        return tuple(utility.ids[i] for i in range(n) if (mask >> i) & 1)
    chosen = min((mask_ids(int(m)) for m in tied), key=lambda t: t)
    return AllocationAction(selected=frozenset(chosen)), best


def _solve_knapsack(instance: AllocationInstance) -> tuple[AllocationAction, float]:
    nets = _net_values(instance)
    units = sorted(instance.units, key=lambda u: u.unit_id)
    forced: list[int] = []
    candidates: list[TokenUnit] = []
    for u in units:
        if u.cost_components.memory == 0:
            if nets[u.unit_id] > 0:
                forced.append(u.unit_id)
        elif nets[u.unit_id] > 0:
            candidates.append(u)
    total_mem = sum(u.cost_components.memory for u in candidates)
    cap = int(min(instance.budgets.memory, total_mem))
    # dp[c]: (objective, selection tuple) using capacity <= c; units processed in
    # descending id order so each inclusion prepends, keeping lex tie-breaks exact.
    dp: list[tuple[float, tuple[int, ...]]] = [(0.0, ())] * (cap + 1)
    for u in sorted(candidates, key=lambda x: -x.unit_id):
        m = u.cost_components.memory
        v = nets[u.unit_id]
        for c in range(cap, m - 1, -1):
            base_obj, base_sel = dp[c - m]
            cand = (base_obj + v, (u.unit_id,) + base_sel)
            cur = dp[c]
            if cand[0] > cur[0] or (cand[0] == cur[0] and cand[1] < cur[1]):
                dp[c] = cand
    obj, sel = dp[cap]
    selected = frozenset(sel) | frozenset(forced)
    obj += sum(nets[uid] for uid in forced)
    return AllocationAction(selected=selected), obj


def solve_offline(instance: AllocationInstance) -> tuple[AllocationAction, float]:
    """Exact offline benchmark of the constrained selection problem.

    Additive-family utilities under a pure memory budget use the knapsack DP
    (any n); everything else enumerates subsets exhaustively (n <= 20). Ties
    break toward the lexicographically smallest selected id set.
    """
    if not instance.units:
        return AllocationAction(selected=frozenset()), 0.0
    for u in instance.units:
        if not isinstance(u.cost_components.memory, int):
            raise ValueError("solve_offline requires integer memory costs")
    additive = instance.utility.kind in (UtilityKind.ADDITIVE, UtilityKind.PLANTED_SUBSET)
    multi_constraint = math.isfinite(instance.budgets.latency) or math.isfinite(
        instance.budgets.hardware
    )
    if additive and not multi_constraint:
        return _solve_knapsack(instance)
    return _solve_exhaustive(instance)


def compute_regret(trajectory: Trajectory, instance: AllocationInstance) -> float:
    """Economic regret of the trajectory's final action against the offline benchmark."""
    _, optimum = solve_offline(instance)
    return optimum - trajectory.final_objective


def dual_update(
    prices: Mapping[str, float],
    usage: Mapping[str, float],
    budget_share: Mapping[str, float],
    eta: float,
) -> dict[str, float]:
    """Projected subgradient step on resource shadow prices.

    price_r <- max(0, price_r + eta * (usage_r - per-step budget share_r)).
    """
    if eta <= 0:
        raise ValueError("eta must be > 0")
    out = dict(prices)
    for resource, share in budget_share.items():
        used = usage.get(resource, 0.0)
        shift = 0.0 if math.isinf(share) else used - share
        out[resource] = max(0.0, out.get(resource, 0.0) + eta * shift)
    return out


def check_tail_constraint(
    trajectory: Trajectory, latency_target: float, delta: float
) -> tuple[bool, float]:
    """Empirical tail check: fraction of steps with latency above the target vs delta."""
    if not trajectory.records:
        raise ValueError("trajectory is empty")
    exceed = sum(1 for r in trajectory.records if r.latency > latency_target)
    rate = exceed / len(trajectory.records)
    return rate <= delta, rate


def allocate_batch_resources(
    values: Sequence[float], quality_curves: Sequence[Sequence[float]], capacity: int
) -> tuple[list[int], float]:
    """Marginal-gain greedy over integer resource levels (optimal for concave curves).

    quality_curves[i][r] is the cumulative quality of unit i at level r, with
    q(0) = 0, non-decreasing and concave. One level at a time goes to the unit
    with the largest v_i * delta-q; ties break by lowest unit index. Grants
    stop once the best marginal gain is no longer positive (further grants
    could not change the objective).
    """
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    if len(values) != len(quality_curves):
        raise ValueError("values and quality_curves must align")
    for i, q in enumerate(quality_curves):
        if not q or q[0] != 0:
            raise ValueError(f"quality curve {i} must start at q(0) = 0")
        diffs = [q[r + 1] - q[r] for r in range(len(q) - 1)]
        if any(d < 0 for d in diffs):
            raise ValueError(f"quality curve {i} must be non-decreasing")
        if any(diffs[r + 1] > diffs[r] + 1e-12 for r in range(len(diffs) - 1)):
            raise ValueError(f"quality curve {i} must be concave")
    levels = [0] * len(values)
    remaining = capacity
    objective = 0.0
    while remaining > 0:
        best_gain = 0.0
        best_i = -1
        for i, q in enumerate(quality_curves):
            if levels[i] + 1 < len(q):
                gain = values[i] * (q[levels[i] + 1] - q[levels[i]])
                if gain > best_gain:
                    best_gain, best_i = gain, i
        if best_i < 0:
            break
        levels[best_i] += 1
        objective += best_gain
        remaining -= 1
    return levels, objective


def action_hash(selected: frozenset[int]) -> str:
    """Short stable digest of a retained-set action for trace rows."""
    payload = ",".join(str(uid) for uid in sorted(selected))
    return hashlib.sha256(payload.encode("ascii")).hexdigest()[:16]


def trajectory_rows(trajectory: Trajectory) -> list[dict]:
    """Row-per-step serialization of a trajectory (the trace CSV schema)."""
    rows = []
    retained: set[int] = set()
    for rec in trajectory.records:
        retained |= set(rec.admitted)
        retained -= set(rec.evicted)
        rows.append(
            {
                "step": rec.step,
                "action_hash": action_hash(frozenset(retained)),
                "realized_utility": f"{rec.realized_utility:.9g}",
                "memory_used": rec.memory_used,
                "latency": f"{rec.latency:.9g}",
                "sensing_cost": f"{rec.sensing_cost:.9g}",
                "alloc_cost": f"{rec.alloc_cost:.9g}",
                "flags": "|".join(rec.flags),
            }
        )
    return rows


# --- online policy machinery -------------------------------------------------


@dataclass(frozen=True, slots=True)
class ArrivalView:
    """What a policy is allowed to see about a unit: no true value components."""

    unit_id: int
    token_class: str
    memory: int
    latency_cost: float
    compute_cost: float
    arrival_step: int


def _view(unit: TokenUnit) -> ArrivalView:
    return ArrivalView(
        unit_id=unit.unit_id,
        token_class=unit.token_class.value,
        memory=unit.cost_components.memory,
        latency_cost=unit.cost_components.latency,
        compute_cost=unit.cost_components.compute,
        arrival_step=unit.arrival_step,
    )


def _restricted_utility(utility: UtilityFunction, member_ids: Sequence[int]) -> UtilityFunction:
    """Restriction of an additive-family utility to a subset of its ground set."""
    ids = tuple(sorted(member_ids))
    pos = utility.position_of
    if utility.kind is UtilityKind.ADDITIVE:
        return UtilityFunction(
            kind=UtilityKind.ADDITIVE,
            ids=ids,
            weights=tuple(utility.weights[pos[uid]] for uid in ids),
        )
    if utility.kind is UtilityKind.PLANTED_SUBSET:
        return UtilityFunction(
            kind=UtilityKind.PLANTED_SUBSET,
            ids=ids,
            planted=frozenset(uid for uid in ids if uid in utility.planted),
            payoff=utility.payoff,
        )
    raise ValueError(
        "batch estimators require a utility that is additive across arrival groups"
    )


def _batch_estimates(
    estimator: EstimatorSpec,
    utility: UtilityFunction,
    group_ids: Sequence[int],
    stream: np.random.Generator | None,
) -> dict[int, ValueEstimate]:
    restricted = _restricted_utility(utility, group_ids)
    if estimator.kind is Provenance.SHAPLEY_EXACT:
        phi = shapley_exact(restricted)
        err = np.zeros(len(phi))
    elif estimator.kind is Provenance.LEAVE_ONE_OUT:
        phi = leave_one_out(restricted)
        err = np.zeros(len(phi))
    else:
        if stream is None:
            raise ValueError("shapley_mc estimation requires a random stream")
        phi, err = shapley_mc(restricted, estimator.samples, stream)
    return {
        uid: ValueEstimate(
            unit_id=uid,
            mean=float(phi[k]),
            variance=float(err[k] ** 2),
            provenance=estimator.kind,
            sensing_cost_charged=estimator.unit_cost,
        )
        for k, uid in enumerate(restricted.ids)
    }


def _streaming_estimate(
    estimator: EstimatorSpec,
    instance: AllocationInstance,
    unit: TokenUnit,
    retained: set[int],
    context: UnitContext,
    nets: dict[int, float] | None,
) -> ValueEstimate:
    if estimator.kind is Provenance.ORACLE:
        if nets is not None:
            # Additive-family utility: the counterfactual marginal is the net weight.
            mean = nets[unit.unit_id]
        else:
            mean = marginal_value_oracle(
                instance.utility,
                retained | {unit.unit_id},
                unit.unit_id,
                instance.weights,
                unit.cost_components,
            )
        return ValueEstimate(
            unit_id=unit.unit_id,
            mean=mean,
            variance=0.0,
            provenance=Provenance.ORACLE,
            sensing_cost_charged=estimator.unit_cost,
        )
    return proxy_value(estimator, unit, context)


class _PolicyState:
    """Mutable per-trajectory policy state (threshold level, shadow prices)."""

    def __init__(self, policy: PolicySpec, budgets: Budgets, horizon: int) -> None:
        self.policy = policy
        self.threshold = policy.initial_threshold
        self.prices: dict[str, float] = {"memory": 0.0}
        mem_share = (
            budgets.memory / horizon if math.isfinite(budgets.memory) else math.inf
        )
        self.budget_share = {"memory": mem_share}

    def wants(self, view: ArrivalView, estimate: ValueEstimate) -> bool:
        kind = self.policy.kind
        if kind is PolicyKind.RECENCY:
            return True
        if kind is PolicyKind.GREEDY:
            return estimate.mean > 0
        if kind is PolicyKind.THRESHOLD_DYNAMIC:
            return estimate.mean > self.threshold
        if kind is PolicyKind.PRIMAL_DUAL:
            return estimate.mean - self.prices["memory"] * view.memory > 0
        raise AssertionError(kind)

    def after_step(self, memory_used: int, admitted_memory: int, budgets: Budgets) -> None:
        kind = self.policy.kind
        if kind is PolicyKind.THRESHOLD_DYNAMIC and math.isfinite(budgets.memory):
            pressure = memory_used / budgets.memory if budgets.memory > 0 else 1.0
            self.threshold = max(
                0.0, self.threshold + self.policy.eta * (pressure - self.policy.target_utilization)
            )
        elif kind is PolicyKind.PRIMAL_DUAL:
            self.prices = dual_update(
                self.prices, {"memory": admitted_memory}, self.budget_share, self.policy.eta
            )


def _evict_to_fit(
    retained: set[int],
    budgets: Budgets,
    unit_of: dict[int, TokenUnit],
    scores: dict[int, float],
    by_recency: bool,
) -> list[int]:
    """Evict lowest-score (or oldest) retained units until the set fits memory.

    A just-admitted unit sits in `retained` and competes on equal terms, so a
    low-estimate arrival can be the unit that gets dropped.
    """
    evicted: list[int] = []
    if not math.isfinite(budgets.memory):
        return evicted
    used = sum(unit_of[uid].cost_components.memory for uid in retained)
    if by_recency:
        order = sorted(retained, key=lambda uid: (unit_of[uid].arrival_step, uid))
    else:
        order = sorted(retained, key=lambda uid: (scores.get(uid, 0.0), uid))
    for uid in order:
        if used <= budgets.memory:
            break
        retained.discard(uid)
        used -= unit_of[uid].cost_components.memory
        evicted.append(uid)
    return evicted


class _Retained:
    """Retained-set bookkeeping with lazy-deletion heaps for eviction order."""

    def __init__(self, unit_of: dict[int, TokenUnit]) -> None:
        self.ids: set[int] = set()
        self.memory_used = 0
        self._unit_of = unit_of
        self._by_score: list[tuple[float, int]] = []
        self._by_age: list[tuple[int, int]] = []

    def add(self, uid: int, score: float) -> None:
        import heapq

        unit = self._unit_of[uid]
        self.ids.add(uid)
        self.memory_used += unit.cost_components.memory
        heapq.heappush(self._by_score, (score, uid))
        heapq.heappush(self._by_age, (unit.arrival_step, uid))

    def evict_to_fit(self, budget: float, by_recency: bool) -> list[int]:
        import heapq

        evicted: list[int] = []
        if not math.isfinite(budget):
            return evicted
        heap = self._by_age if by_recency else self._by_score
        while self.memory_used > budget:
            while heap and heap[0][1] not in self.ids:
                heapq.heappop(heap)
            if not heap:
                break
            _, uid = heapq.heappop(heap)
            self.ids.discard(uid)
            self.memory_used -= self._unit_of[uid].cost_components.memory
            evicted.append(uid)
        return evicted


def _lookahead_choice(
    group: list[TokenUnit],
    estimates: dict[int, ValueEstimate],
    retained: set[int],
    budgets: Budgets,
    unit_of: dict[int, TokenUnit],
    horizon: int,
) -> set[int]:
    """Exhaustively branch admit/reject over the first `horizon` units of the group.

    Remaining group units are admitted greedily by estimate sign. Each branch is
    scored by the estimated value of the resulting retained set after eviction.
    """
    if horizon == 0:
        return {u.unit_id for u in group if estimates[u.unit_id].mean > 0}
    head = group[:horizon]
    tail = group[horizon:]
    best_value: float | None = None
    best_tuple: tuple[int, ...] = ()
    best_admit: set[int] = set()
    for mask in range(1 << len(head)):
        admit = {head[i].unit_id for i in range(len(head)) if (mask >> i) & 1}
        admit |= {u.unit_id for u in tail if estimates[u.unit_id].mean > 0}
        all_scores = {uid: estimates[uid].mean for uid in estimates}
        for uid in retained:
            all_scores.setdefault(uid, 0.0)
        trial_retained = set(retained) | admit
        _evict_to_fit(trial_retained, budgets, unit_of, all_scores, by_recency=False)
        est_value = sum(all_scores.get(uid, 0.0) for uid in trial_retained)
        admit_key = tuple(sorted(admit))
        better = best_value is None or est_value > best_value or (
            est_value == best_value and admit_key < best_tuple
        )
        if better:
            best_value = est_value
            best_tuple = admit_key
            best_admit = admit
    return best_admit


def run_policy(
    policy: PolicySpec,
    instance: AllocationInstance,
    estimator: EstimatorSpec,
    stream: np.random.Generator | None = None,
    groups: Sequence[Sequence[int]] | None = None,
    contexts: Mapping[int, UnitContext] | None = None,
) -> Trajectory:
    """Run an online policy over the instance's arrival stream.

    Each step one arrival group (default: one unit) becomes visible. The policy
    sees only ArrivalViews and ValueEstimates. Sensing spend (units valued x
    declared unit cost) plus the declared per-step decision cost is charged
    against tau; over-budget steps are flagged and fall back to the zero-cost
    recency default (admit, evict oldest). Memory is enforced by mandatory
    eviction of lowest-estimate units; a unit that alone exceeds the memory
    budget is rejected and recorded as a forced rejection.
    """
    units = list(instance.units)
    unit_of = {u.unit_id: u for u in units}
    if groups is None:
        groups = [[k] for k in range(len(units))]
    budgets = instance.budgets
    state = _PolicyState(policy, budgets, horizon=max(1, len(groups)))
    retained = _Retained(unit_of)
    estimates: dict[int, ValueEstimate] = {}
    scores: dict[int, float] = {}
    records: list[StepRecord] = []
    units_valued = 0
    needs_estimates = policy.kind is not PolicyKind.RECENCY
    additive_like = instance.utility.kind in (UtilityKind.ADDITIVE, UtilityKind.PLANTED_SUBSET)
    nets = _net_values(instance) if additive_like else None
    gross_of: dict[int, float] = {}
    if additive_like:
        pos = instance.utility.position_of
        for u in units:
            if instance.utility.kind is UtilityKind.ADDITIVE:
                gross_of[u.unit_id] = instance.utility.weights[pos[u.unit_id]]
            else:
                gross_of[u.unit_id] = (
                    instance.utility.payoff if u.unit_id in instance.utility.planted else 0.0
                )
    running_gross = 0.0
    running_cost = 0.0

    def admit_unit(uid: int, score: float, by_recency: bool) -> list[int]:
        nonlocal running_gross, running_cost
        retained.add(uid, score)
        running_gross += gross_of.get(uid, 0.0)
        running_cost += scalarized_cost(unit_of[uid].cost_components, instance.weights)
        evicted = retained.evict_to_fit(budgets.memory, by_recency=by_recency)
        for out in evicted:
            running_gross -= gross_of.get(out, 0.0)
            running_cost -= scalarized_cost(unit_of[out].cost_components, instance.weights)
        return evicted

    for step, group_idx in enumerate(groups):
        group = [units[k] for k in group_idx]
        flags: list[str] = []
        rejected = [
            u.unit_id for u in group if u.cost_components.memory > budgets.memory
        ]
        if rejected:
            flags.append("forced_reject")
        group = [u for u in group if u.unit_id not in rejected]
        sensing = 0.0
        if needs_estimates and group:
            group_ids = [u.unit_id for u in group]
            if estimator.kind in BATCH_ESTIMATORS:
                fresh = _batch_estimates(estimator, instance.utility, group_ids, stream)
            else:
                fresh = {}
                for u in group:
                    ctx = (contexts or {}).get(u.unit_id, UnitContext(step=step))
                    fresh[u.unit_id] = _streaming_estimate(
                        estimator, instance, u, retained.ids, ctx, nets
                    )
            estimates.update(fresh)
            for uid, est in fresh.items():
                scores[uid] = est.mean
            sensing = estimator.unit_cost * len(group)
            units_valued += len(group)
        alloc_cost = policy.step_cost
        over_budget = sensing + alloc_cost > budgets.tau
        evicted_all: list[int] = []
        admitted: list[int] = []
        if over_budget:
            flags.append("budget_violating")
        fallback_step = over_budget or policy.kind is PolicyKind.RECENCY
        if fallback_step:
            # Zero-cost default: admit arrivals, evict oldest to fit.
            wanted = group
        elif policy.kind is PolicyKind.LOOKAHEAD:
            admit = _lookahead_choice(
                group, estimates, retained.ids, budgets, unit_of, policy.lookahead
            )
            wanted = [u for u in group if u.unit_id in admit]
        else:
            wanted = [u for u in group if state.wants(_view(u), estimates[u.unit_id])]
        for u in wanted:
            ev = admit_unit(u.unit_id, scores.get(u.unit_id, 0.0), fallback_step)
            evicted_all.extend(ev)
            if u.unit_id in retained.ids:
                admitted.append(u.unit_id)
        memory_used = retained.memory_used
        admitted_memory = sum(unit_of[uid].cost_components.memory for uid in admitted)
        state.after_step(memory_used, admitted_memory, budgets)
        if additive_like:
            realized_utility = running_gross
        else:
            realized_utility = eval_utility(instance.utility, retained.ids)
        realized_cost = instance.weights.lambda_exchange * running_cost
        exec_latency = sum(unit_of[uid].cost_components.latency for uid in admitted)
        records.append(
            StepRecord(
                step=step,
                arrived=tuple(units[k].unit_id for k in group_idx),
                admitted=tuple(admitted),
                evicted=tuple(evicted_all),
                rejected=tuple(rejected),
                memory_used=memory_used,
                realized_utility=realized_utility,
                realized_cost=realized_cost,
                latency=sensing + alloc_cost + exec_latency,
                sensing_cost=sensing,
                alloc_cost=alloc_cost,
                flags=tuple(flags),
            )
        )
    final = frozenset(retained.ids)
    return Trajectory(
        records=tuple(records),
        final_selected=final,
        final_objective=selection_objective(instance, final),
        units_valued=units_valued,
    )
