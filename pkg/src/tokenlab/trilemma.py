"""(G, R, O) measurement, the adversarial planted family, and brute-force
verification of the query-then-fill lower bound.

The bound's policy is implemented exactly as the proof construction: query k
units uniformly at random, keep the planted units found, and fill the rest of
the retention budget uniformly from the unqueried pool. An adaptive probing
variant is reported separately and never used for bound verification.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.stats import hypergeom

from .allocation import (
    AllocationInstance,
    PolicySpec,
    Trajectory,
    run_policy,
    selection_objective,
    solve_offline,
)
from .core import Budgets, ObjectiveWeights, TokenUnit, ValueVector, CostVector, derive_rng_stream
from .kvcache import assign_tokens_to_blocks
from .valuation import (
    EstimatorSpec,
    LabeledUnit,
    Provenance,
    UnitContext,
    UtilityFunction,
    UtilityKind,
    fit_static_predictor,
)
from .workload import ValueDist, WorkloadParams, build_request


class PlantedInstance:
    """Hidden planted-value instance: values readable only through paid queries."""

    def __init__(self, n_units: int, planted: frozenset[int], query_cost: float = 1.0) -> None:
        if not planted <= set(range(n_units)):
            raise ValueError("planted ids must lie in [0, n_units)")
        if query_cost <= 0:
            raise ValueError("query cost must be > 0 (residual sensing cost is never free)")
        self.n_units = n_units
        self.query_cost = query_cost
        self.sensing_spent = 0.0
        self._planted = planted

    @property
    def n_planted(self) -> int:
        return len(self._planted)

    def query(self, unit_id: int) -> float:
        """Probe one unit's value; charges the per-probe cost."""
        if not (0 <= unit_id < self.n_units):
            raise ValueError(f"unit {unit_id} out of range")
        self.sensing_spent += self.query_cost
        return 1.0 if unit_id in self._planted else 0.0

    def selection_value(self, selected) -> float:
        """Scoring-only total value of a selection (does not charge sensing)."""
        return float(sum(1 for uid in selected if uid in self._planted))


def planted_instance(
    n_units: int, n_planted: int, stream: np.random.Generator, query_cost: float = 1.0
) -> PlantedInstance:
    """Draw the planted set uniformly over size-B subsets of [0, N)."""
    if not (1 <= n_planted <= n_units):
        raise ValueError(f"need 1 <= B <= N, got B={n_planted}, N={n_units}")
    chosen = stream.choice(n_units, size=n_planted, replace=False)
    return PlantedInstance(n_units, frozenset(int(i) for i in chosen), query_cost)


def bound_expected_value(n_units: int, n_planted: int, queries: int) -> tuple[Fraction, Fraction]:
    """Exact rational (value upper bound, regret lower bound) for query-then-fill.

    Value bound (k+B)B/N; regret lower bound B(1 - (k+B)/N), vacuous at k = N.
    """
    if not (0 <= queries <= n_units):
        raise ValueError(f"need 0 <= k <= N, got k={queries}, N={n_units}")
    if not (1 <= n_planted <= n_units):
        raise ValueError(f"need 1 <= B <= N, got B={n_planted}, N={n_units}")
    value_bound = Fraction((queries + n_planted) * n_planted, n_units)
    regret_bound = n_planted * (1 - Fraction(queries + n_planted, n_units))
    return value_bound, regret_bound


def probe_then_fill_value(
    instance: PlantedInstance, queries: int, stream: np.random.Generator
) -> float:
    """Run the proof's policy once on a planted instance; returns retained value."""
    n = instance.n_units
    budget = instance.n_planted
    order = stream.permutation(n)
    found = [int(u) for u in order[:queries] if instance.query(int(u)) > 0]
    fill_count = budget - len(found)
    fill = [int(u) for u in order[queries : queries + fill_count]]
    return instance.selection_value(found + fill)


def adaptive_probe_then_fill_value(
    instance: PlantedInstance, queries: int, stream: np.random.Generator
) -> float:
    """Adaptive variant (reported only): stop probing once all B are found."""
    n = instance.n_units
    budget = instance.n_planted
    order = stream.permutation(n)
    found: list[int] = []
    probed = 0
    for u in order:
        if probed >= queries or len(found) == budget:
            break
        probed += 1
        if instance.query(int(u)) > 0:
            found.append(int(u))
    unprobed = [int(u) for u in order[probed:]]
    fill = unprobed[: budget - len(found)]
    return instance.selection_value(found + fill)


def exact_policy_expectation(n_units: int, n_planted: int, queries: int) -> float:
    """Analytic E[retained value] of query-then-fill: kB/N + E[(B-found)^2]/(N-k)."""
    n, b, k = n_units, n_planted, queries
    if k >= n:
        return float(b)
    lo = max(0, b + k - n)
    hi = min(b, k)
    expectation = 0.0
    for f in range(lo, hi + 1):
        p = hypergeom(n, b, k).pmf(f)
        expectation += p * (f + (b - f) ** 2 / (n - k))
    return float(expectation)


@dataclass(frozen=True, slots=True)
class BoundReport:
    n_units: int
    n_planted: int
    queries: int
    trials: int
    value_bound: float
    regret_lower_bound: float
    empirical_mean: float
    stderr: float
    margin_sigmas: float
    exact_expectation: float
    sensing_cost_per_trial: float
    passed: bool


def mc_verify_bound(
    n_units: int,
    n_planted: int,
    queries: int,
    trials: int,
    stream: np.random.Generator,
    query_cost: float = 1.0,
) -> BoundReport:
    """Monte Carlo check that query-then-fill stays below the closed-form bound."""
    if trials < 100:
        raise ValueError("bound verification needs at least 100 trials")
    values = np.empty(trials)
    for t in range(trials):
        inst = planted_instance(n_units, n_planted, stream, query_cost)
        values[t] = probe_then_fill_value(inst, queries, stream)
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    vb, rb = bound_expected_value(n_units, n_planted, queries)
    bound = float(vb)
    margin = (bound - mean) / stderr if stderr > 0 else math.inf
    return BoundReport(
        n_units=n_units,
        n_planted=n_planted,
        queries=queries,
        trials=trials,
        value_bound=bound,
        regret_lower_bound=float(rb),
        empirical_mean=mean,
        stderr=stderr,
        margin_sigmas=margin,
        exact_expectation=exact_policy_expectation(n_units, n_planted, queries),
        sensing_cost_per_trial=queries * query_cost,
        passed=mean <= bound + 3.0 * stderr,
    )


# --- (G, R, O) measurement ----------------------------------------------------


@dataclass(frozen=True, slots=True)
class TrilemmaPoint:
    """One measured (G, R, O) triple with its grid cell metadata."""

    name: str
    policy: str
    estimator: str
    block_size: int
    tau: float
    granularity: int
    realtime_ratio: float
    regret_mean: float | None
    regret_ci95: float
    seeds: int
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.granularity < 1:
            raise ValueError("G must be >= 1")
        if self.realtime_ratio < 0:
            raise ValueError("R must be >= 0")
        if self.regret_mean is not None and self.regret_mean < -self.regret_ci95 - 1e-9:
            raise ValueError("O below -CI half-width")


@dataclass(frozen=True)
class SweepStream:
    """Static request-stream family measured by the sweep."""

    n_requests: int = 4
    tokens_per_request: int = 16
    value_dist: ValueDist = ValueDist.PLANTED_EARLY_INSTRUCTION
    value_cv: float = 1.5
    attention_bias: float = 0.6
    memory_fraction: float = 0.5


@dataclass(frozen=True)
class SweepCell:
    name: str
    policy: PolicySpec
    estimator: EstimatorSpec
    block_size: int
    tau: float


def realtime_ratio(trajectory: Trajectory, tau: float) -> float:
    """Mean over steps of (sensing + allocation cost) / tau; zero when tau is inf."""
    if not trajectory.records or math.isinf(tau):
        return 0.0
    return float(
        np.mean([(r.sensing_cost + r.alloc_cost) / tau for r in trajectory.records])
    )


def _stream_params(spec: SweepStream) -> WorkloadParams:
    return WorkloadParams(
        rate=1.0,
        tokens_per_request=spec.tokens_per_request,
        value_cv=spec.value_cv,
        value_dist=spec.value_dist,
        attention_bias=spec.attention_bias,
    )


def _build_instances(
    spec: SweepStream, block_size: int, seed: int, label: str, tau: float
) -> tuple[AllocationInstance, AllocationInstance, list[list[int]], dict[int, UnitContext], dict[int, tuple[int, ...]]]:
    """Token-level instance (benchmark) plus its block-level view (policy stream)."""
    stream = derive_rng_stream(seed, label)
    params = _stream_params(spec)
    requests = [
        build_request(rid, rid, spec.tokens_per_request, params, stream, rid * spec.tokens_per_request)
        for rid in range(spec.n_requests)
    ]
    tokens = [t for req in requests for t in req.tokens]
    total = len(tokens)
    budget = Budgets(memory=int(spec.memory_fraction * total), tau=tau)
    weights = ObjectiveWeights()
    token_utility = UtilityFunction(
        kind=UtilityKind.ADDITIVE,
        ids=tuple(t.unit_id for t in tokens),
        weights=tuple(t.value_components.accuracy for t in tokens),
    )
    token_instance = AllocationInstance(
        units=tuple(tokens), utility=token_utility, budgets=budget, weights=weights
    )
    block_units: list[TokenUnit] = []
    block_tokens: dict[int, tuple[int, ...]] = {}
    contexts: dict[int, UnitContext] = {}
    groups: list[list[int]] = []
    for req in requests:
        group: list[int] = []
        for page in assign_tokens_to_blocks(list(req.tokens), block_size):
            bid = len(block_units)
            value = sum(t.value_components.accuracy for t in page)
            first = page[0]
            block_units.append(
                TokenUnit(
                    unit_id=bid,
                    token_class=first.token_class,
                    value_components=ValueVector(accuracy=float(value)),
                    cost_components=CostVector(memory=len(page)),
                    arrival_step=req.arrival_step,
                )
            )
            block_tokens[bid] = tuple(t.unit_id for t in page)
            first_ctx = req.contexts[first.unit_id]
            masses = [req.contexts[t.unit_id].attention_mass for t in page]
            contexts[bid] = UnitContext(
                step=req.arrival_step,
                position_in_request=first_ctx.position_in_request,
                attention_mass=float(np.mean(masses)),
            )
            group.append(bid)
        groups.append(group)
    block_utility = UtilityFunction(
        kind=UtilityKind.ADDITIVE,
        ids=tuple(u.unit_id for u in block_units),
        weights=tuple(u.value_components.accuracy for u in block_units),
    )
    block_instance = AllocationInstance(
        units=tuple(block_units), utility=block_utility, budgets=budget, weights=weights
    )
    return token_instance, block_instance, groups, contexts, block_tokens


def measure_point(
    policy: PolicySpec,
    estimator: EstimatorSpec,
    block_size: int,
    spec: SweepStream,
    tau: float,
    seeds: int,
    base_seed: int,
    name: str = "",
) -> TrilemmaPoint:
    """Measure one (G, R, O) point over `seeds` replicate streams."""
    if seeds < 2:
        raise ValueError("measure_point needs at least 2 seeds for a CI")
    if block_size < 1:
        raise ValueError("block size must be >= 1")
    regrets: list[float] = []
    ratios: list[float] = []
    flags: set[str] = set()
    granularity = 0
    for s in range(seeds):
        label = f"trilemma:{name}:{block_size}:{tau}:{s}"
        token_inst, block_inst, groups, contexts, block_tokens = _build_instances(
            spec, block_size, base_seed, label, tau
        )
        granularity = len(block_inst.units)
        run_stream = derive_rng_stream(base_seed, label + ":policy")
        traj = run_policy(
            policy, block_inst, estimator, stream=run_stream, groups=groups, contexts=contexts
        )
        ratios.append(realtime_ratio(traj, tau))
        retained_tokens = frozenset(
            tid for bid in traj.final_selected for tid in block_tokens[bid]
        )
        try:
            _, optimum = solve_offline(token_inst)
        except ValueError:
            flags.add("benchmark_unavailable")
            continue
        realized = selection_objective(token_inst, retained_tokens)
        regrets.append(optimum - realized)
        if any("budget_violating" in r.flags for r in traj.records):
            flags.add("budget_violating_steps")
    if estimator.amortized_charge > 0:
        flags.add("amortized_offline_charge")
    if regrets:
        regret_mean = float(np.mean(regrets))
        ci = (
            1.96 * float(np.std(regrets, ddof=1)) / math.sqrt(len(regrets))
            if len(regrets) > 1
            else 0.0
        )
    else:
        regret_mean = None
        ci = 0.0
    return TrilemmaPoint(
        name=name,
        policy=policy.kind.value,
        estimator=estimator.kind.value,
        block_size=block_size,
        tau=tau,
        granularity=granularity,
        realtime_ratio=float(np.mean(ratios)),
        regret_mean=regret_mean,
        regret_ci95=ci,
        seeds=seeds,
        flags=tuple(sorted(flags)),
    )


def fit_sweep_predictor(
    spec: SweepStream, block_size: int, base_seed: int, position_bucket: int = 4
) -> tuple[dict, float]:
    """Calibration run for the amortized static predictor, at block granularity.

    Returns the frozen (class, position-bucket) table and the offline charge:
    one oracle counterfactual per calibration block.
    """
    _, block_inst, _, contexts, _ = _build_instances(
        spec, block_size, base_seed, "trilemma:calibration", math.inf
    )
    labeled = [
        LabeledUnit(
            unit=u,
            true_value=float(u.value_components.accuracy),
            context=contexts[u.unit_id],
        )
        for u in block_inst.units
    ]
    table = fit_static_predictor(labeled, position_bucket=position_bucket)
    offline_charge = len(labeled) * 1.0
    return table, offline_charge


def table1_presets(tau: float = 1.0) -> list[SweepCell]:
    """The four named design-regime cells measured by the preset sweep."""
    from .allocation import PolicyKind

    return [
        SweepCell(
            name="request_heuristic",
            policy=PolicySpec(kind=PolicyKind.GREEDY, step_cost=0.05),
            estimator=EstimatorSpec(kind=Provenance.RECENCY, unit_cost=0.05, decay=0.1),
            block_size=16,
            tau=tau,
        ),
        SweepCell(
            name="token_offline",
            policy=PolicySpec(kind=PolicyKind.GREEDY, step_cost=0.1),
            estimator=EstimatorSpec(kind=Provenance.SHAPLEY_EXACT, unit_cost=4.0),
            block_size=1,
            tau=tau,
        ),
        SweepCell(
            name="token_naive_online",
            policy=PolicySpec(kind=PolicyKind.LOOKAHEAD, step_cost=1.0, lookahead=4),
            estimator=EstimatorSpec(kind=Provenance.ORACLE, unit_cost=1.0),
            block_size=1,
            tau=tau,
        ),
        SweepCell(
            name="block_amortized",
            policy=PolicySpec(kind=PolicyKind.GREEDY, step_cost=0.1),
            estimator=EstimatorSpec(kind=Provenance.STATIC_PREDICTOR, unit_cost=0.0),
            block_size=4,
            tau=tau,
        ),
    ]


def _resolve_cell(cell: SweepCell, spec: SweepStream, base_seed: int) -> SweepCell:
    est = cell.estimator
    if est.kind is Provenance.STATIC_PREDICTOR and est.predictor_table is None:
        table, charge = fit_sweep_predictor(spec, cell.block_size, base_seed)
        est = replace(est, predictor_table=table, amortized_charge=charge)
        return replace(cell, estimator=est)
    return cell


def _measure_cell(args: tuple[SweepCell, SweepStream, int, int]) -> TrilemmaPoint:
    cell, spec, seeds, base_seed = args
    return measure_point(
        cell.policy,
        cell.estimator,
        cell.block_size,
        spec,
        cell.tau,
        seeds,
        base_seed,
        name=cell.name,
    )


def frontier_sweep(
    cells: Sequence[SweepCell],
    spec: SweepStream,
    seeds: int,
    base_seed: int,
    jobs: int = 1,
) -> list[TrilemmaPoint]:
    """Measure every grid cell; output sorted by grid key, independent of job count."""
    resolved = [_resolve_cell(c, spec, base_seed) for c in cells]
    work = [(c, spec, seeds, base_seed) for c in resolved]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_measure_cell, work))
    else:
        points = [_measure_cell(w) for w in work]
    return sorted(points, key=lambda p: (p.policy, p.estimator, p.block_size, p.tau, p.name))
