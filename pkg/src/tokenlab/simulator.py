"""Deterministic discrete-event serving loop: arrivals, admission, prefill,
value-aware caching, optional speculation, decode, and sensing/decision cost
accounting against the per-step budget tau.

Step latency is the total of abstract cost units charged that step; wall-clock
never enters any artifact. All randomness flows through labeled streams derived
from the scenario seed, so a seed reproduces bit-identical metrics and traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .accounting import Ledger, verification_overhead
from .allocation import STREAMING_ESTIMATORS, PolicyKind, action_hash
from .core import CostVector, TokenClass, TokenUnit, ValueVector, derive_rng_stream
from .kvcache import CacheState, EvictionPolicy
from .scenario import ScenarioConfig
from .speculative import (
    SpecCostModel,
    decide_speculate,
    env,
    proposal_from_position_model,
    simulate_spec_round,
)
from .valuation import (
    DEFAULT_UNIT_COST,
    LabeledUnit,
    Provenance,
    UnitContext,
    ValueEstimate,
    fit_static_predictor,
    proxy_value,
)
from .workload import MEAN_TOKEN_VALUE, Request, generate_workload


@dataclass(frozen=True)
class SimMetrics:
    """Run-level economics: goodput, latency shape, conservation counts, R, regret."""

    goodput: float
    mean_latency: float
    p99_latency: float
    memory_high_water: int
    regret: float | None
    per_class_counts: dict[str, int]
    realtime_ratio: float
    total_utility: float
    total_cost: float
    inference_cost: float
    sensing_cost: float
    alloc_cost: float
    metadata_units: int
    metadata_ratio: float
    metadata_pass: bool
    verification_overhead: float
    tail_exceedance_rate: float
    tail_pass: bool
    requests_arrived: int
    requests_admitted: int
    requests_rejected: int
    requests_completed: int
    forced_rejections: int
    budget_violating_steps: int
    ledger_head: str

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["regret"] = self.regret
        return out


@dataclass
class SimResult:
    metrics: SimMetrics
    step_rows: list[dict]
    cache_rows: list[dict]
    spec_rows: list[dict]
    ledger: Ledger


@dataclass
class _Active:
    request: Request
    produced: int = 0
    pending: list[tuple[TokenUnit, float, float]] = field(default_factory=list)
    block_ids: set[int] = field(default_factory=set)
    done: bool = False


def _zero_estimate(unit_id: int) -> ValueEstimate:
    return ValueEstimate(
        unit_id=unit_id,
        mean=0.0,
        variance=0.0,
        provenance=Provenance.RECENCY,
        sensing_cost_charged=0.0,
    )


def _fit_serving_predictor(config: ScenarioConfig):
    """Freeze the amortized (class, position-bucket) table from a calibration run.

    The calibration stream is a separate labeled stream of the same workload,
    including the generated-token tail, scored with oracle values; the offline
    charge is one oracle counterfactual per calibration unit.
    """
    stream = derive_rng_stream(config.seed, "calibration")
    requests = generate_workload(config.workload, config.horizon, stream)
    corpus: list[LabeledUnit] = []
    next_uid = sum(len(r.tokens) for r in requests)
    for req in requests:
        for t in req.tokens:
            corpus.append(
                LabeledUnit(
                    unit=t,
                    true_value=req.true_values[t.unit_id],
                    context=req.contexts[t.unit_id],
                )
            )
        for j in range(req.output_budget):
            unit = TokenUnit(
                unit_id=next_uid,
                token_class=TokenClass.OUTPUT,
                value_components=ValueVector(accuracy=MEAN_TOKEN_VALUE),
                cost_components=CostVector(memory=1),
                arrival_step=req.arrival_step,
            )
            next_uid += 1
            corpus.append(
                LabeledUnit(
                    unit=unit,
                    true_value=MEAN_TOKEN_VALUE,
                    context=UnitContext(
                        step=req.arrival_step,
                        position_in_request=len(req.tokens) + j,
                        attention_mass=1.0,
                    ),
                )
            )
    table = fit_static_predictor(corpus, position_bucket=config.estimator.position_bucket)
    charge = len(corpus) * DEFAULT_UNIT_COST[Provenance.ORACLE]
    return table, charge


class _Simulation:
    def __init__(self, config: ScenarioConfig) -> None:
        if config.estimator.kind not in STREAMING_ESTIMATORS:
            raise ValueError(
                "the serving loop needs a streaming estimator; coalition estimators "
                "run in the frontier sweep instead"
            )
        if (
            config.estimator.kind is Provenance.STATIC_PREDICTOR
            and config.estimator.predictor_table is None
        ):
            from dataclasses import replace

            table, charge = _fit_serving_predictor(config)
            config = replace(
                config,
                estimator=replace(
                    config.estimator, predictor_table=table, amortized_charge=charge
                ),
            )
        self.config = config
        self.capacity = config.derived_capacity()
        if self.capacity < config.block_size:
            raise ValueError("cache capacity must be at least one block")
        self.cache = CacheState(
            capacity=self.capacity,
            block_size=config.block_size,
            mu=config.cache.mu,
            gamma=config.cache.gamma,
        )
        self.policy_id = f"{config.policy.kind.value}/{config.cache_policy.value}"
        self.ledger = Ledger()
        self.evict_stream = derive_rng_stream(config.seed, "evict")
        self.spec_stream = derive_rng_stream(config.seed, "speculation")
        self.needs_sensing = (
            config.policy.kind is not PolicyKind.RECENCY
            or config.cache_policy is EvictionPolicy.VALUE_AWARE
        )
        self.true_value: dict[int, float] = {}
        self.block_owner: dict[int, int] = {}
        self.active: dict[int, _Active] = {}
        self.threshold = config.policy.initial_threshold
        self.mem_price = 0.0
        self.step_rows: list[dict] = []
        self.cache_rows: list[dict] = []
        self.spec_rows: list[dict] = []
        self.per_class: dict[str, int] = {}
        self.latencies: list[float] = []
        self.ratios: list[float] = []
        self.delivered = 0.0
        self.regret_total = 0.0
        self.inference_cost = 0.0
        self.sensing_total = 0.0
        self.alloc_total = 0.0
        self.high_water = 0
        self.arrived = self.admitted = self.rejected = self.completed = 0
        self.forced_rejections = 0
        self.violating_steps = 0
        self.next_unit_id = 0
        self.spec_round = 0

    # -- helpers ---------------------------------------------------------------

    def _estimate(self, unit: TokenUnit, ctx: UnitContext, truth: float) -> ValueEstimate:
        est = self.config.estimator
        if not self.needs_sensing:
            return _zero_estimate(unit.unit_id)
        if est.kind is Provenance.ORACLE:
            # Workload utilities are additive, so the counterfactual marginal is
            # the token's own net value.
            return ValueEstimate(
                unit_id=unit.unit_id,
                mean=truth,
                variance=0.0,
                provenance=Provenance.ORACLE,
                sensing_cost_charged=est.unit_cost,
            )
        return proxy_value(est, unit, ctx)

    def _count(self, cls: TokenClass, n: int = 1) -> None:
        self.per_class[cls.value] = self.per_class.get(cls.value, 0) + n

    def _log_cache(self, step: int, kind: str, block_id: int, lam: float | None) -> None:
        self.cache_rows.append(
            {
                "step": step,
                "event": kind,
                "block_id": block_id,
                "lambda_after": "" if lam is None else f"{lam:.9g}",
                "occupancy": self.cache.occupancy,
            }
        )

    def _evict_for(self, step: int, needed: int, flagged: bool) -> None:
        policy = EvictionPolicy.LRU if flagged else self.config.cache_policy
        lam_before = {bid: self.cache.shadow_price(bid) for bid in self.cache.blocks}
        for bid in self.cache.evict(needed, policy, self.evict_stream):
            owner = self.block_owner.pop(bid, None)
            if owner is not None and owner in self.active:
                self.active[owner].block_ids.discard(bid)
            self._log_cache(step, "evict", bid, lam_before.get(bid))

    def _admit_request(self, req: Request, step: int, flagged: bool) -> bool:
        cfg = self.config
        kind = cfg.policy.kind
        estimates = {
            t.unit_id: self._estimate(t, req.contexts[t.unit_id], req.true_values[t.unit_id])
            for t in req.tokens
        }
        total_est = sum(e.mean for e in estimates.values())
        size = len(req.tokens)
        if flagged or kind is PolicyKind.RECENCY:
            admit = True
        elif kind is PolicyKind.THRESHOLD_DYNAMIC:
            admit = total_est / size > self.threshold
        elif kind is PolicyKind.PRIMAL_DUAL:
            admit = total_est - self.mem_price * size > 0
        else:  # greedy and lookahead admit on positive estimated net value
            admit = total_est > 0
        if not admit:
            return False
        self._evict_for(step, size, flagged)
        entry = _Active(request=req)
        for page in _pages(list(req.tokens), cfg.block_size):
            masses = [req.contexts[t.unit_id].attention_mass for t in page]
            bid = self.cache.insert_block(
                page, estimates, step, attention_mass=float(np.mean(masses))
            )
            self.block_owner[bid] = req.request_id
            entry.block_ids.add(bid)
            self._log_cache(step, "insert", bid, self.cache.shadow_price(bid))
        self.active[req.request_id] = entry
        for t in req.tokens:
            self.true_value[t.unit_id] = req.true_values[t.unit_id]
            self._count(t.token_class)
        return True

    def _flush_pending(self, entry: _Active, step: int, flagged: bool, final: bool) -> None:
        cfg = self.config
        while entry.pending and (len(entry.pending) >= cfg.block_size or final):
            page_items = entry.pending[: cfg.block_size]
            entry.pending = entry.pending[cfg.block_size :]
            tokens = [t for t, _, _ in page_items]
            estimates = {
                t.unit_id: ValueEstimate(
                    unit_id=t.unit_id,
                    mean=score,
                    variance=0.0,
                    provenance=self.config.estimator.kind if self.needs_sensing else Provenance.RECENCY,
                    sensing_cost_charged=0.0,
                )
                for t, score, _ in page_items
            }
            masses = [m for _, _, m in page_items]
            self._evict_for(step, len(tokens), flagged)
            bid = self.cache.insert_block(
                tokens, estimates, step, attention_mass=float(np.mean(masses))
            )
            # One incremental metadata update per flushed page (amortized model).
            self.cache.metadata_units += 1
            self.block_owner[bid] = entry.request.request_id
            entry.block_ids.add(bid)
            self._log_cache(step, "flush", bid, self.cache.shadow_price(bid))

    def _complete(self, entry: _Active, step: int) -> None:
        resident: list[float] = []
        for bid in sorted(entry.block_ids):
            if bid not in self.cache.blocks:
                continue
            block = self.cache.release_block(bid)
            resident.extend(self.true_value[tid] for tid in block.token_ids)
            self.block_owner.pop(bid, None)
            self._log_cache(step, "release", bid, None)
        resident_value = math.fsum(resident)
        self.delivered += resident_value
        # Per-request full-information benchmark: the best capacity-sized subset
        # of everything the request produced, contention from other requests
        # relaxed away (an upper bound, so regret stays >= 0).
        all_values = [
            self.true_value[t.unit_id] for t in entry.request.tokens
        ] + [MEAN_TOKEN_VALUE] * entry.produced
        optimum = math.fsum(sorted(all_values, reverse=True)[: self.capacity])
        self.regret_total += max(0.0, optimum - resident_value)
        self.completed += 1
        entry.done = True

    def _reject_regret(self, req: Request) -> None:
        values = sorted(req.true_values.values(), reverse=True)
        self.regret_total += math.fsum(values[: self.capacity])

    # -- main loop ---------------------------------------------------------------

    def run(self) -> SimResult:
        cfg = self.config
        requests = generate_workload(
            cfg.workload, cfg.horizon, derive_rng_stream(cfg.seed, "workload")
        )
        self.next_unit_id = sum(len(r.tokens) for r in requests)
        by_step: dict[int, list[Request]] = {}
        for r in requests:
            by_step.setdefault(r.arrival_step, []).append(r)
        tau = cfg.budgets.tau
        for step in range(cfg.horizon):
            arrivals = by_step.get(step, [])
            self.arrived += len(arrivals)
            # Per-class (token count, cost units charged) accumulators this step.
            step_classes: dict[TokenClass, list[float]] = {}

            def charge(cls: TokenClass, count: int, cost: float) -> None:
                acc = step_classes.setdefault(cls, [0, 0.0])
                acc[0] += count
                acc[1] += cost

            prefill_cost = 0.0
            decode_cost = 0.0
            spec_cost = 0.0
            sensing = 0.0
            meta_before = self.cache.metadata_units
            delivered_before = self.delivered

            # Admission sensing is spent before the tau check can gate decisions.
            admission_sensing = 0.0
            if self.needs_sensing:
                admission_sensing = cfg.estimator.unit_cost * sum(
                    len(r.tokens) for r in arrivals if len(r.tokens) <= self.capacity
                )
            flagged = admission_sensing + cfg.policy.step_cost > tau
            if flagged:
                self.violating_steps += 1

            admitted_memory = 0
            for req in arrivals:
                if len(req.tokens) > self.capacity:
                    self.forced_rejections += 1
                    self.rejected += 1
                    self._reject_regret(req)
                    continue
                if self.needs_sensing:
                    sensing += cfg.estimator.unit_cost * len(req.tokens)
                if self._admit_request(req, step, flagged):
                    self.admitted += 1
                    admitted_memory += len(req.tokens)
                    prefill_cost += cfg.costs.prefill_per_token * len(req.tokens)
                    for t in req.tokens:
                        charge(t.token_class, 1, cfg.costs.prefill_per_token)
                else:
                    self.rejected += 1
                    self._reject_regret(req)

            # Decode pass over requests admitted before this step.
            for rid in sorted(self.active):
                entry = self.active[rid]
                if entry.done or entry.request.arrival_step >= step:
                    continue
                remaining = entry.request.output_budget - entry.produced
                if remaining <= 0:
                    continue
                produced_now: list[tuple[TokenClass, float]] = []
                spec = cfg.speculation
                if (
                    spec.enabled
                    and remaining > spec.draft_length
                    and not math.isinf(spec.threshold)
                ):
                    probs = [spec.p_acc] * spec.draft_length
                    costs = SpecCostModel(
                        draft_cost_per_token=spec.c_draft,
                        verify_cost=spec.c_verify,
                        target_cost_per_token=cfg.costs.decode_per_token,
                    )
                    proposal = proposal_from_position_model(probs, costs, spec.info_value)
                    decision = decide_speculate(proposal, spec.threshold)
                    accepted = 0
                    realized_net = 0.0
                    if decision:
                        outcome = simulate_spec_round(probs, costs, self.spec_stream)
                        accepted = outcome.accepted_length
                        spec_cost += outcome.realized_cost
                        realized_net = outcome.realized_net
                        for _ in range(accepted):
                            produced_now.append((TokenClass.SPECULATIVE, 0.0))
                        charge(TokenClass.SPECULATIVE, accepted, outcome.realized_cost)
                    self.spec_rows.append(
                        {
                            "round": self.spec_round,
                            "draft_length": spec.draft_length,
                            "env": f"{env(proposal):.9g}",
                            "decision": int(decision),
                            "accepted_length": accepted,
                            "realized_net": f"{realized_net:.9g}",
                        }
                    )
                    self.spec_round += 1
                # One target-model token per step (the corrective token after a
                # speculation round, or the plain decode step).
                decode_cost += cfg.costs.decode_per_token
                produced_now.append((TokenClass.OUTPUT, cfg.costs.decode_per_token))
                charge(TokenClass.OUTPUT, 1, cfg.costs.decode_per_token)
                for cls, _cost in produced_now:
                    uid = self.next_unit_id
                    self.next_unit_id += 1
                    unit = TokenUnit(
                        unit_id=uid,
                        token_class=cls,
                        value_components=ValueVector(accuracy=MEAN_TOKEN_VALUE),
                        cost_components=CostVector(memory=1),
                        arrival_step=step,
                    )
                    position = len(entry.request.tokens) + entry.produced
                    ctx = UnitContext(step=step, position_in_request=position, attention_mass=1.0)
                    est = self._estimate(unit, ctx, MEAN_TOKEN_VALUE)
                    if self.needs_sensing:
                        sensing += cfg.estimator.unit_cost
                    self.true_value[uid] = MEAN_TOKEN_VALUE
                    entry.pending.append((unit, est.mean, ctx.attention_mass))
                    entry.produced += 1
                    self._count(cls)
                self._flush_pending(entry, step, flagged, final=False)
                if entry.produced >= entry.request.output_budget:
                    self._flush_pending(entry, step, flagged, final=True)
                    self._complete(entry, step)

            alloc_cost = cfg.policy.step_cost
            meta_delta = self.cache.metadata_units - meta_before
            exec_cost = prefill_cost + decode_cost + spec_cost
            latency = exec_cost + sensing + alloc_cost + meta_delta * 1.0
            self.inference_cost += exec_cost
            self.sensing_total += sensing
            self.alloc_total += alloc_cost
            self.latencies.append(latency)
            self.ratios.append(0.0 if math.isinf(tau) else (sensing + alloc_cost) / tau)
            self.high_water = max(self.high_water, self.cache.occupancy)
            # Decode-time scoring can push the realized spend over tau after
            # admission was gated; record the violation even though the
            # fallback can no longer apply to this step's decisions.
            if not flagged and sensing + alloc_cost > tau:
                flags_late = True
                self.violating_steps += 1
            else:
                flags_late = False
            self._post_step(admitted_memory)
            for cls in sorted(step_classes, key=lambda c: c.value):
                count, cost = step_classes[cls]
                self.ledger.record(
                    step=step,
                    token_class=cls,
                    count=int(count),
                    cost_units=float(cost),
                    policy_id=self.policy_id,
                )
            flags = []
            if flagged or flags_late:
                flags.append("budget_violating")
            self.step_rows.append(
                {
                    "step": step,
                    "action_hash": action_hash(frozenset(self.cache.retained_token_ids())),
                    "realized_utility": f"{self.delivered - delivered_before:.9g}",
                    "memory_used": self.cache.occupancy,
                    "latency": f"{latency:.9g}",
                    "sensing_cost": f"{sensing:.9g}",
                    "alloc_cost": f"{alloc_cost:.9g}",
                    "flags": "|".join(flags),
                }
            )
        return self._finish()

    def _post_step(self, admitted_memory: int) -> None:
        cfg = self.config
        if cfg.policy.kind is PolicyKind.THRESHOLD_DYNAMIC:
            pressure = self.cache.occupancy / self.capacity if self.capacity else 1.0
            self.threshold = max(
                0.0,
                self.threshold + cfg.policy.eta * (pressure - cfg.policy.target_utilization),
            )
        elif cfg.policy.kind is PolicyKind.PRIMAL_DUAL:
            share = self.capacity / cfg.horizon
            self.mem_price = max(
                0.0, self.mem_price + cfg.policy.eta * (admitted_memory - share)
            )

    def _finish(self) -> SimResult:
        cfg = self.config
        latencies = np.array(self.latencies) if self.latencies else np.zeros(1)
        total_cost = float(latencies.sum())
        inference = self.inference_cost
        if inference > 0:
            from .kvcache import metadata_overhead

            meta_ratio, meta_pass = metadata_overhead(
                self.cache.metadata_units, inference, cfg.cache.gamma
            )
            ver_overhead = verification_overhead(self.ledger.hashing_cost_units, inference)
        else:
            meta_ratio, meta_pass = 0.0, True
            ver_overhead = 0.0
        tail_budget = cfg.budgets.tail_latency
        exceed = float(np.mean(latencies > tail_budget)) if self.latencies else 0.0
        metrics = SimMetrics(
            goodput=self.delivered / total_cost if total_cost > 0 else 0.0,
            mean_latency=float(latencies.mean()),
            p99_latency=float(np.percentile(latencies, 99)),
            memory_high_water=self.high_water,
            regret=self.regret_total if (self.completed + self.rejected) > 0 else None,
            per_class_counts=dict(sorted(self.per_class.items())),
            realtime_ratio=float(np.mean(self.ratios)) if self.ratios else 0.0,
            total_utility=self.delivered,
            total_cost=total_cost,
            inference_cost=inference,
            sensing_cost=self.sensing_total,
            alloc_cost=self.alloc_total,
            metadata_units=self.cache.metadata_units,
            metadata_ratio=meta_ratio,
            metadata_pass=meta_pass,
            verification_overhead=ver_overhead,
            tail_exceedance_rate=exceed,
            tail_pass=exceed <= cfg.budgets.tail_delta,
            requests_arrived=self.arrived,
            requests_admitted=self.admitted,
            requests_rejected=self.rejected,
            requests_completed=self.completed,
            forced_rejections=self.forced_rejections,
            budget_violating_steps=self.violating_steps,
            ledger_head=self.ledger.head_hex,
        )
        return SimResult(
            metrics=metrics,
            step_rows=self.step_rows,
            cache_rows=self.cache_rows,
            spec_rows=self.spec_rows,
            ledger=self.ledger,
        )


def _pages(tokens: list[TokenUnit], block_size: int) -> list[list[TokenUnit]]:
    return [tokens[i : i + block_size] for i in range(0, len(tokens), block_size)]


def run(config: ScenarioConfig) -> SimResult:
    """Run one scenario end to end; deterministic given the scenario seed."""
    return _Simulation(config).run()


# --- break-even regime map ----------------------------------------------------


@dataclass(frozen=True, slots=True)
class RegimeCell:
    """One (CV, pressure) cell: paired fine/coarse goodput and the cell label."""

    value_cv: float
    pressure: float
    fine_goodput_mean: float
    fine_goodput_ci: float
    coarse_goodput_mean: float
    coarse_goodput_ci: float
    advantage_mean: float
    advantage_ci: float
    label: str
    sense_alloc_per_step: float
    bare_generation_p99: float
    latency_floor_infeasible: bool


@dataclass(frozen=True)
class BreakevenResult:
    cells: tuple[RegimeCell, ...]
    epsilon_sys: dict[float, float | None]


def _cell_config(base: ScenarioConfig, cv: float, pressure: float, fine: bool, seed: int,
                 capacity: int, control: bool = False) -> ScenarioConfig:
    from dataclasses import replace

    from .scenario import CacheConfig
    from .workload import ValueDist, WorkloadParams

    workload = WorkloadParams(
        rate=base.workload.rate * pressure,
        tokens_per_request=base.workload.tokens_per_request,
        value_cv=cv,
        value_dist=ValueDist.LOGNORMAL,
        attention_bias=base.workload.attention_bias,
        pressure=min(2.0, pressure),
    )
    if fine:
        policy = base.policy
        estimator = base.estimator
        cache_policy = EvictionPolicy.VALUE_AWARE
    else:
        from .allocation import PolicySpec
        from .valuation import EstimatorSpec

        policy = PolicySpec(
            kind=PolicyKind.RECENCY, step_cost=0.0 if control else base.policy.step_cost
        )
        estimator = EstimatorSpec(kind=Provenance.RECENCY, unit_cost=0.05)
        cache_policy = EvictionPolicy.LRU
    return replace(
        base,
        seed=seed,
        workload=workload,
        policy=policy,
        estimator=estimator,
        cache_policy=cache_policy,
        cache=CacheConfig(capacity=capacity, mu=base.cache.mu, gamma=base.cache.gamma),
    )


def _measure_regime_cell(
    args: tuple[ScenarioConfig, float, float, int, int]
) -> RegimeCell:
    base, cv, pressure, seeds, capacity = args
    fine_g = np.zeros(seeds)
    coarse_g = np.zeros(seeds)
    sense_alloc = np.zeros(seeds)
    bare_p99 = np.zeros(seeds)
    for s in range(seeds):
        seed = base.seed + s
        fine_cfg = _cell_config(base, cv, pressure, fine=True, seed=seed, capacity=capacity)
        coarse_cfg = _cell_config(base, cv, pressure, fine=False, seed=seed, capacity=capacity)
        control_cfg = _cell_config(
            base, cv, pressure, fine=False, seed=seed, capacity=capacity, control=True
        )
        fine_m = _Simulation(fine_cfg).run().metrics
        coarse_m = _Simulation(coarse_cfg).run().metrics
        control_m = _Simulation(control_cfg).run().metrics
        fine_g[s] = fine_m.goodput
        coarse_g[s] = coarse_m.goodput
        steps = max(1, base.horizon)
        sense_alloc[s] = (fine_m.sensing_cost + fine_m.alloc_cost) / steps
        bare_p99[s] = control_m.p99_latency
    diff = fine_g - coarse_g
    ci = 1.96 * float(diff.std(ddof=1)) / math.sqrt(seeds) if seeds > 1 else 0.0
    mean = float(diff.mean())
    sense_mean = float(sense_alloc.mean())
    gen_p99 = float(bare_p99.mean())
    floor_violated = (
        math.isfinite(base.budgets.tail_latency)
        and sense_mean > base.budgets.tail_latency - gen_p99
    )
    if floor_violated:
        label = "coarse"
    elif mean - ci > 0:
        label = "fine"
    elif mean + ci < 0:
        label = "coarse"
    else:
        label = "tie"
    def half_ci(arr: np.ndarray) -> float:
        return 1.96 * float(arr.std(ddof=1)) / math.sqrt(seeds) if seeds > 1 else 0.0
    return RegimeCell(
        value_cv=cv,
        pressure=pressure,
        fine_goodput_mean=float(fine_g.mean()),
        fine_goodput_ci=half_ci(fine_g),
        coarse_goodput_mean=float(coarse_g.mean()),
        coarse_goodput_ci=half_ci(coarse_g),
        advantage_mean=mean,
        advantage_ci=ci,
        label=label,
        sense_alloc_per_step=sense_mean,
        bare_generation_p99=gen_p99,
        latency_floor_infeasible=floor_violated,
    )


def breakeven_sweep(
    base: ScenarioConfig,
    cv_grid: list[float],
    pressure_grid: list[float],
    seeds: int,
    jobs: int = 1,
) -> BreakevenResult:
    """Fine-grained (value-aware + sensing) vs coarse heuristic over a CV x pressure grid.

    Pressure multiplies the arrival rate against a capacity pinned at the base
    scenario's utilization-1 demand, so the utilization target equals the
    pressure knob. Cells failing the latency-floor condition
    (T_sense + T_alloc > tail_L - bare-generation p99) are labeled coarse
    regardless of the goodput comparison.
    """
    if not cv_grid or not pressure_grid:
        raise ValueError("grids must be non-empty")
    from dataclasses import replace as _replace

    cap_base = _replace(
        base,
        workload=_replace(base.workload, pressure=1.0),
    ).derived_capacity()
    work = [
        (base, cv, pressure, seeds, cap_base)
        for cv in sorted(cv_grid)
        for pressure in sorted(pressure_grid)
    ]
    if jobs > 1 and len(work) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_measure_regime_cell, work))
    else:
        cells = [_measure_regime_cell(w) for w in work]
    cells.sort(key=lambda c: (c.value_cv, c.pressure))
    epsilon: dict[float, float | None] = {}
    for pressure in sorted(pressure_grid):
        winners = [c.value_cv for c in cells if c.pressure == pressure and c.label == "fine"]
        epsilon[pressure] = min(winners) if winners else None
    return BreakevenResult(cells=tuple(cells), epsilon_sys=epsilon)
