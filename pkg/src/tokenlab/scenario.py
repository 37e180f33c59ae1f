"""Scenario configuration: schema v1 parsing, validation, and serialization.

Scenario files are JSON with a top-level integer schema_version (current = 1).
Unknown keys are an error, every violated invariant is reported with its field
path, and omitted optional budgets default to unconstrained sentinels (never
zero). Unbounded values serialize as null. Round-tripping a valid config
through serialize/parse is the identity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .allocation import PolicyKind, PolicySpec
from .core import Budgets, ObjectiveWeights
from .kvcache import EvictionPolicy
from .valuation import DEFAULT_UNIT_COST, EstimatorSpec, Provenance
from .workload import OUTPUT_TOKENS_PER_REQUEST, ValueDist, WorkloadParams

SCHEMA_VERSION = 1
DEFAULT_HORIZON = 48


class ScenarioValidationError(ValueError):
    def __init__(self, errors: list[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True, slots=True)
class CostModel:
    prefill_per_token: float = 1.0
    decode_per_token: float = 4.0


@dataclass(frozen=True, slots=True)
class CacheConfig:
    capacity: int | None = None  # None derives capacity from workload pressure
    mu: float = 1.0
    gamma: float = 0.01


@dataclass(frozen=True, slots=True)
class SpeculationConfig:
    enabled: bool = False
    draft_length: int = 4
    p_acc: float = 0.7
    c_draft: float = 0.5
    c_verify: float = 1.0
    info_value: float = 0.0
    threshold: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Frozen, validated scenario; the seed fully determines all stochastic draws."""

    seed: int
    workload: WorkloadParams
    estimator: EstimatorSpec
    policy: PolicySpec
    cache_policy: EvictionPolicy
    budgets: Budgets
    block_size: int
    weights: ObjectiveWeights
    costs: CostModel
    cache: CacheConfig
    speculation: SpeculationConfig
    horizon: int = DEFAULT_HORIZON
    output_dir: str | None = None
    schema_version: int = SCHEMA_VERSION

    def derived_capacity(self) -> int:
        """Cache capacity in memory units; derived from pressure unless pinned."""
        if self.cache.capacity is not None:
            return self.cache.capacity
        tpr = self.workload.tokens_per_request
        mean_prompt = (tpr[0] + tpr[1]) / 2 if isinstance(tpr, tuple) else tpr
        out = OUTPUT_TOKENS_PER_REQUEST
        resident = self.workload.rate * out * (mean_prompt + out / 2)
        pressure = max(self.workload.pressure, 0.1)
        return max(self.block_size, int(round(resident / pressure)))


_TOP_KEYS = {
    "schema_version",
    "seed",
    "horizon",
    "output_dir",
    "workload",
    "estimator",
    "policy",
    "budgets",
    "granularity",
    "weights",
    "costs",
    "cache",
    "speculation",
}
_WORKLOAD_KEYS = {"rate", "tokens_per_request", "value_cv", "value_dist", "attention_bias", "pressure"}
_ESTIMATOR_KEYS = {"kind", "params", "unit_cost"}
_ESTIMATOR_PARAM_KEYS = {"samples", "decay", "attention_scale", "position_bucket"}
_POLICY_KEYS = {"kind", "params", "step_cost"}
_POLICY_PARAM_KEYS = {"initial_threshold", "eta", "lookahead", "target_utilization", "cache_policy"}
_BUDGET_KEYS = {"memory", "latency", "hardware", "tau", "tail_L", "tail_delta"}
_GRANULARITY_KEYS = {"block_size"}
_WEIGHT_KEYS = {
    "alpha_acc",
    "alpha_safety",
    "alpha_format",
    "alpha_user",
    "lambda_lat",
    "lambda_mem",
    "lambda_comp",
    "lambda_exchange",
}
_COST_KEYS = {"prefill_per_token", "decode_per_token"}
_CACHE_KEYS = {"capacity", "mu", "gamma"}
_SPEC_KEYS = {"enabled", "draft_length", "p_acc", "c_draft", "c_verify", "info_value", "threshold"}


def _check_keys(section: dict, allowed: set[str], path: str, errors: list[str]) -> None:
    for key in section:
        if key not in allowed:
            errors.append(f"{path}{key}: unknown key")


def _section(raw: dict, key: str, errors: list[str]) -> dict:
    value = raw.get(key, {}) or {}
    if not isinstance(value, dict):
        errors.append(f"{key}: expected an object")
        return {}
    return value


def _num(raw: Any, path: str, errors: list[str], default: float) -> float:
    if raw is None:
        return default
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        errors.append(f"{path}: expected a number")
        return default
    return float(raw)


def _optional_budget(raw: Any, path: str, errors: list[str]) -> float:
    if raw is None:
        return math.inf
    value = _num(raw, path, errors, math.inf)
    if value < 0:
        errors.append(f"{path}: budget must be >= 0")
        return math.inf
    return value


def validate_scenario(raw: dict[str, Any]) -> ScenarioConfig:
    """Validate a parsed scenario document; raises with every violation's field path."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ScenarioValidationError(["scenario document must be a JSON object"])
    _check_keys(raw, _TOP_KEYS, "", errors)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version: unsupported version {version} (current {SCHEMA_VERSION})")

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        errors.append("seed: expected an integer")
        seed = 0
    horizon = raw.get("horizon", DEFAULT_HORIZON)
    if not isinstance(horizon, int) or horizon < 1:
        errors.append("horizon: expected an integer >= 1")
        horizon = DEFAULT_HORIZON
    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        errors.append("output_dir: expected a string or null")
        output_dir = None

    wl = _section(raw, "workload", errors)
    _check_keys(wl, _WORKLOAD_KEYS, "workload.", errors)
    tpr_raw = wl.get("tokens_per_request", 16)
    tokens_per_request: int | tuple[int, int]
    if isinstance(tpr_raw, list):
        if len(tpr_raw) == 2 and all(isinstance(v, int) for v in tpr_raw):
            tokens_per_request = (tpr_raw[0], tpr_raw[1])
        else:
            errors.append("workload.tokens_per_request: expected int or [lo, hi]")
            tokens_per_request = 16
    elif isinstance(tpr_raw, int):
        tokens_per_request = tpr_raw
    else:
        errors.append("workload.tokens_per_request: expected int or [lo, hi]")
        tokens_per_request = 16
    dist_raw = wl.get("value_dist", "lognormal")
    try:
        value_dist = ValueDist(dist_raw)
    except ValueError:
        errors.append(f"workload.value_dist: unknown kind {dist_raw!r}")
        value_dist = ValueDist.LOGNORMAL
    workload = None
    try:
        workload = WorkloadParams(
            rate=_num(wl.get("rate"), "workload.rate", errors, 1.0),
            tokens_per_request=tokens_per_request,
            value_cv=_num(wl.get("value_cv"), "workload.value_cv", errors, 0.0),
            value_dist=value_dist,
            attention_bias=_num(wl.get("attention_bias"), "workload.attention_bias", errors, 0.5),
            pressure=_num(wl.get("pressure"), "workload.pressure", errors, 0.8),
        )
    except ValueError as exc:
        errors.append(f"workload: {exc}")

    est = _section(raw, "estimator", errors)
    _check_keys(est, _ESTIMATOR_KEYS, "estimator.", errors)
    est_params = est.get("params", {}) or {}
    if not isinstance(est_params, dict):
        errors.append("estimator.params: expected an object")
        est_params = {}
    _check_keys(est_params, _ESTIMATOR_PARAM_KEYS, "estimator.params.", errors)
    kind_raw = est.get("kind", "oracle")
    try:
        est_kind = Provenance(kind_raw)
    except ValueError:
        errors.append(f"estimator.kind: unknown kind {kind_raw!r}")
        est_kind = Provenance.ORACLE
    estimator = None
    try:
        estimator = EstimatorSpec(
            kind=est_kind,
            unit_cost=_num(est.get("unit_cost"), "estimator.unit_cost", errors, DEFAULT_UNIT_COST[est_kind]),
            samples=int(est_params.get("samples", 256)),
            decay=_num(est_params.get("decay"), "estimator.params.decay", errors, 0.5),
            attention_scale=_num(
                est_params.get("attention_scale"), "estimator.params.attention_scale", errors, 1.0
            ),
            position_bucket=int(est_params.get("position_bucket", 4)),
        )
    except (ValueError, TypeError) as exc:
        errors.append(f"estimator: {exc}")

    pol = _section(raw, "policy", errors)
    _check_keys(pol, _POLICY_KEYS, "policy.", errors)
    pol_params = pol.get("params", {}) or {}
    if not isinstance(pol_params, dict):
        errors.append("policy.params: expected an object")
        pol_params = {}
    _check_keys(pol_params, _POLICY_PARAM_KEYS, "policy.params.", errors)
    pkind_raw = pol.get("kind", "greedy")
    try:
        policy_kind = PolicyKind(pkind_raw)
    except ValueError:
        errors.append(f"policy.kind: unknown kind {pkind_raw!r}")
        policy_kind = PolicyKind.GREEDY
    policy = None
    try:
        policy = PolicySpec(
            kind=policy_kind,
            step_cost=_num(pol.get("step_cost"), "policy.step_cost", errors, 0.05),
            initial_threshold=_num(
                pol_params.get("initial_threshold"), "policy.params.initial_threshold", errors, 0.0
            ),
            eta=_num(pol_params.get("eta"), "policy.params.eta", errors, 0.1),
            lookahead=int(pol_params.get("lookahead", 2)),
            target_utilization=_num(
                pol_params.get("target_utilization"), "policy.params.target_utilization", errors, 0.9
            ),
        )
    except (ValueError, TypeError) as exc:
        errors.append(f"policy: {exc}")
    cache_policy_raw = pol_params.get("cache_policy", "value_aware")
    try:
        cache_policy = EvictionPolicy(cache_policy_raw)
    except ValueError:
        errors.append(f"policy.params.cache_policy: unknown kind {cache_policy_raw!r}")
        cache_policy = EvictionPolicy.VALUE_AWARE

    bud = _section(raw, "budgets", errors)
    _check_keys(bud, _BUDGET_KEYS, "budgets.", errors)
    tail_delta = _num(bud.get("tail_delta"), "budgets.tail_delta", errors, 1.0)
    budgets = None
    if not (0.0 <= tail_delta <= 1.0):
        errors.append("budgets.tail_delta: tail_probability out of [0,1]")
    else:
        try:
            budgets = Budgets(
                memory=_optional_budget(bud.get("memory"), "budgets.memory", errors),
                latency=_optional_budget(bud.get("latency"), "budgets.latency", errors),
                hardware=_optional_budget(bud.get("hardware"), "budgets.hardware", errors),
                tau=_optional_budget(bud.get("tau"), "budgets.tau", errors),
                tail_latency=_optional_budget(bud.get("tail_L"), "budgets.tail_L", errors),
                tail_delta=tail_delta,
            )
        except ValueError as exc:
            errors.append(f"budgets: {exc}")

    gran = _section(raw, "granularity", errors)
    _check_keys(gran, _GRANULARITY_KEYS, "granularity.", errors)
    block_size = gran.get("block_size", 8)
    if not isinstance(block_size, int) or block_size < 1:
        errors.append("granularity.block_size: block size must be an integer >= 1")
        block_size = 8

    wgt = _section(raw, "weights", errors)
    _check_keys(wgt, _WEIGHT_KEYS, "weights.", errors)
    weights = None
    try:
        weights = ObjectiveWeights(
            alpha_acc=_num(wgt.get("alpha_acc"), "weights.alpha_acc", errors, 1.0),
            alpha_safety=_num(wgt.get("alpha_safety"), "weights.alpha_safety", errors, 1.0),
            alpha_format=_num(wgt.get("alpha_format"), "weights.alpha_format", errors, 1.0),
            alpha_user=_num(wgt.get("alpha_user"), "weights.alpha_user", errors, 1.0),
            lambda_lat=_num(wgt.get("lambda_lat"), "weights.lambda_lat", errors, 0.0),
            lambda_mem=_num(wgt.get("lambda_mem"), "weights.lambda_mem", errors, 0.0),
            lambda_comp=_num(wgt.get("lambda_comp"), "weights.lambda_comp", errors, 0.0),
            lambda_exchange=_num(wgt.get("lambda_exchange"), "weights.lambda_exchange", errors, 1.0),
        )
    except ValueError as exc:
        errors.append(f"weights: {exc}")

    cst = _section(raw, "costs", errors)
    _check_keys(cst, _COST_KEYS, "costs.", errors)
    costs = CostModel(
        prefill_per_token=_num(cst.get("prefill_per_token"), "costs.prefill_per_token", errors, 1.0),
        decode_per_token=_num(cst.get("decode_per_token"), "costs.decode_per_token", errors, 4.0),
    )
    if costs.prefill_per_token < 0 or costs.decode_per_token < 0:
        errors.append("costs: per-token costs must be >= 0")

    cch = _section(raw, "cache", errors)
    _check_keys(cch, _CACHE_KEYS, "cache.", errors)
    capacity = cch.get("capacity")
    if capacity is not None and (not isinstance(capacity, int) or capacity < 0):
        errors.append("cache.capacity: expected a non-negative integer or null")
        capacity = None
    cache = CacheConfig(
        capacity=capacity,
        mu=_num(cch.get("mu"), "cache.mu", errors, 1.0),
        gamma=_num(cch.get("gamma"), "cache.gamma", errors, 0.01),
    )
    if cache.gamma <= 0:
        errors.append("cache.gamma: metadata overhead budget must be > 0")

    spc = _section(raw, "speculation", errors)
    _check_keys(spc, _SPEC_KEYS, "speculation.", errors)
    spec_threshold = spc.get("threshold", 0.0)
    speculation = SpeculationConfig(
        enabled=bool(spc.get("enabled", False)),
        draft_length=int(spc.get("draft_length", 4)),
        p_acc=_num(spc.get("p_acc"), "speculation.p_acc", errors, 0.7),
        c_draft=_num(spc.get("c_draft"), "speculation.c_draft", errors, 0.5),
        c_verify=_num(spc.get("c_verify"), "speculation.c_verify", errors, 1.0),
        info_value=_num(spc.get("info_value"), "speculation.info_value", errors, 0.0),
        threshold=math.inf if spec_threshold is None else _num(spc.get("threshold"), "speculation.threshold", errors, 0.0),
    )
    if speculation.enabled:
        if speculation.draft_length < 1:
            errors.append("speculation.draft_length: must be >= 1")
        if not (0.0 <= speculation.p_acc <= 1.0):
            errors.append("speculation.p_acc: out of [0,1]")
        if speculation.c_draft < 0 or speculation.c_verify < 0:
            errors.append("speculation: costs must be >= 0")

    if errors or workload is None or estimator is None or policy is None or budgets is None or weights is None:
        raise ScenarioValidationError(errors or ["invalid scenario"])
    return ScenarioConfig(
        seed=seed,
        horizon=horizon,
        output_dir=output_dir,
        workload=workload,
        estimator=estimator,
        policy=policy,
        cache_policy=cache_policy,
        budgets=budgets,
        block_size=block_size,
        weights=weights,
        costs=costs,
        cache=cache,
        speculation=speculation,
    )


def _budget_value(value: float) -> float | None:
    return None if math.isinf(value) else value


def scenario_to_dict(config: ScenarioConfig) -> dict[str, Any]:
    """Serialize back to the schema v1 document shape (unbounded -> null)."""
    tpr = config.workload.tokens_per_request
    doc: dict[str, Any] = {
        "schema_version": config.schema_version,
        "seed": config.seed,
        "horizon": config.horizon,
        "output_dir": config.output_dir,
        "workload": {
            "rate": config.workload.rate,
            "tokens_per_request": list(tpr) if isinstance(tpr, tuple) else tpr,
            "value_cv": config.workload.value_cv,
            "value_dist": config.workload.value_dist.value,
            "attention_bias": config.workload.attention_bias,
            "pressure": config.workload.pressure,
        },
        "estimator": {
            "kind": config.estimator.kind.value,
            "unit_cost": config.estimator.unit_cost,
            "params": {
                "samples": config.estimator.samples,
                "decay": config.estimator.decay,
                "attention_scale": config.estimator.attention_scale,
                "position_bucket": config.estimator.position_bucket,
            },
        },
        "policy": {
            "kind": config.policy.kind.value,
            "step_cost": config.policy.step_cost,
            "params": {
                "initial_threshold": config.policy.initial_threshold,
                "eta": config.policy.eta,
                "lookahead": config.policy.lookahead,
                "target_utilization": config.policy.target_utilization,
                "cache_policy": config.cache_policy.value,
            },
        },
        "budgets": {
            "memory": _budget_value(config.budgets.memory),
            "latency": _budget_value(config.budgets.latency),
            "hardware": _budget_value(config.budgets.hardware),
            "tau": _budget_value(config.budgets.tau),
            "tail_L": _budget_value(config.budgets.tail_latency),
            "tail_delta": config.budgets.tail_delta,
        },
        "granularity": {"block_size": config.block_size},
        "weights": {
            "alpha_acc": config.weights.alpha_acc,
            "alpha_safety": config.weights.alpha_safety,
            "alpha_format": config.weights.alpha_format,
            "alpha_user": config.weights.alpha_user,
            "lambda_lat": config.weights.lambda_lat,
            "lambda_mem": config.weights.lambda_mem,
            "lambda_comp": config.weights.lambda_comp,
            "lambda_exchange": config.weights.lambda_exchange,
        },
        "costs": {
            "prefill_per_token": config.costs.prefill_per_token,
            "decode_per_token": config.costs.decode_per_token,
        },
        "cache": {
            "capacity": config.cache.capacity,
            "mu": config.cache.mu,
            "gamma": config.cache.gamma,
        },
        "speculation": {
            "enabled": config.speculation.enabled,
            "draft_length": config.speculation.draft_length,
            "p_acc": config.speculation.p_acc,
            "c_draft": config.speculation.c_draft,
            "c_verify": config.speculation.c_verify,
            "info_value": config.speculation.info_value,
            "threshold": _budget_value(config.speculation.threshold),
        },
    }
    return doc


def load_scenario(path: str | Path, seed_override: int | None = None) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    config = validate_scenario(raw)
    if seed_override is not None:
        config = replace(config, seed=seed_override)
    return config


def save_scenario(config: ScenarioConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- instance files (utility + token units) -----------------------------------

_INSTANCE_KEYS = {"schema_version", "utility", "units"}
_UTILITY_KEYS = {"kind", "ids", "weights", "planted", "payoff", "synergy", "element_sets", "element_weights"}
_UNIT_KEYS = {"id", "class", "value", "cost", "arrival_step", "block_id"}


def utility_from_dict(raw: dict[str, Any]) -> "UtilityFunction":
    from .valuation import UtilityFunction, UtilityKind

    errors: list[str] = []
    _check_keys(raw, _UTILITY_KEYS, "utility.", errors)
    if errors:
        raise ScenarioValidationError(errors)
    kind = UtilityKind(raw["kind"])
    ids = tuple(int(i) for i in raw["ids"])
    return UtilityFunction(
        kind=kind,
        ids=ids,
        weights=tuple(float(w) for w in raw.get("weights", ())),
        planted=frozenset(int(i) for i in raw.get("planted", ())),
        payoff=float(raw.get("payoff", 1.0)),
        synergy=tuple(tuple(float(v) for v in row) for row in raw.get("synergy", ())),
        element_sets=tuple(frozenset(int(e) for e in s) for s in raw.get("element_sets", ())),
        element_weights=tuple(float(w) for w in raw.get("element_weights", ())),
    )


def load_instance(path: str | Path):
    """Load an instance file: a utility function plus its token units."""
    from .core import CostVector, TokenClass, TokenUnit, ValueVector

    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    errors: list[str] = []
    _check_keys(raw, _INSTANCE_KEYS, "", errors)
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        errors.append("schema_version: unsupported instance schema")
    if errors:
        raise ScenarioValidationError(errors)
    utility = utility_from_dict(raw["utility"])
    units = []
    for i, u in enumerate(raw.get("units", [])):
        _check_keys(u, _UNIT_KEYS, f"units[{i}].", errors)
        if errors:
            raise ScenarioValidationError(errors)
        val = u.get("value", {})
        cost = u.get("cost", {})
        units.append(
            TokenUnit(
                unit_id=int(u["id"]),
                token_class=TokenClass(u.get("class", "input")),
                value_components=ValueVector(
                    accuracy=float(val.get("accuracy", 0.0)),
                    safety=float(val.get("safety", 0.0)),
                    format=float(val.get("format", 0.0)),
                    user=float(val.get("user", 0.0)),
                ),
                cost_components=CostVector(
                    compute=float(cost.get("compute", 0.0)),
                    memory=int(cost.get("memory", 1)),
                    latency=float(cost.get("latency", 0.0)),
                    monetary=float(cost.get("monetary", 0.0)),
                ),
                arrival_step=int(u.get("arrival_step", 0)),
                block_id=u.get("block_id"),
            )
        )
    return utility, units
