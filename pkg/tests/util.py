"""Shared test helpers: random instance generators and independent brute-force
oracles. The oracles never call the code paths they check."""

from __future__ import annotations

import itertools
import math

import numpy as np

from tokenlab.allocation import AllocationInstance
from tokenlab.core import Budgets, CostVector, ObjectiveWeights, TokenClass, TokenUnit, ValueVector
from tokenlab.valuation import UtilityFunction, UtilityKind, eval_utility


def make_units(n, memories=None, latencies=None, arrival_steps=None, values=None):
    units = []
    for i in range(n):
        units.append(
            TokenUnit(
                unit_id=i,
                token_class=TokenClass.INPUT,
                value_components=ValueVector(accuracy=values[i] if values is not None else 0.0),
                cost_components=CostVector(
                    memory=int(memories[i]) if memories is not None else 1,
                    latency=float(latencies[i]) if latencies is not None else 0.0,
                ),
                arrival_step=int(arrival_steps[i]) if arrival_steps is not None else i,
            )
        )
    return tuple(units)


def additive_utility(weights):
    return UtilityFunction(
        kind=UtilityKind.ADDITIVE, ids=tuple(range(len(weights))), weights=tuple(weights)
    )


def random_utility(kind: UtilityKind, n: int, rng: np.random.Generator) -> UtilityFunction:
    ids = tuple(range(n))
    if kind is UtilityKind.ADDITIVE:
        return UtilityFunction(kind=kind, ids=ids, weights=tuple(rng.normal(1.0, 1.0, n)))
    if kind is UtilityKind.PLANTED_SUBSET:
        b = int(rng.integers(1, n + 1))
        planted = frozenset(int(i) for i in rng.choice(n, size=b, replace=False))
        return UtilityFunction(
            kind=kind, ids=ids, planted=planted, payoff=float(rng.uniform(0.5, 2.0))
        )
    if kind is UtilityKind.PAIRWISE_INTERACTION:
        raw = rng.normal(0.0, 0.7, (n, n))
        syn = (raw + raw.T) / 2
        np.fill_diagonal(syn, 0.0)
        return UtilityFunction(
            kind=kind,
            ids=ids,
            weights=tuple(rng.normal(0.5, 1.0, n)),
            synergy=tuple(tuple(float(v) for v in row) for row in syn),
        )
    n_elem = int(rng.integers(3, 11))
    sets = tuple(
        frozenset(int(e) for e in rng.choice(n_elem, size=int(rng.integers(1, n_elem + 1)), replace=False))
        for _ in range(n)
    )
    return UtilityFunction(
        kind=kind,
        ids=ids,
        element_sets=sets,
        element_weights=tuple(rng.uniform(0.1, 2.0, n_elem)),
    )


def brute_force_shapley(utility: UtilityFunction) -> np.ndarray:
    """Independent oracle: direct sum over subsets via eval_utility."""
    ids = utility.ids
    n = len(ids)
    fact = [math.factorial(k) for k in range(n + 1)]
    phi = np.zeros(n)
    others = [set(ids) - {uid} for uid in ids]
    for i, uid in enumerate(ids):
        for r in range(n):
            for subset in itertools.combinations(sorted(others[i]), r):
                s = frozenset(subset)
                weight = fact[len(s)] * fact[n - len(s) - 1] / fact[n]
                phi[i] += weight * (eval_utility(utility, s | {uid}) - eval_utility(utility, s))
    return phi


def brute_force_offline(instance: AllocationInstance):
    """Independent oracle for solve_offline: loop over all subsets of unit ids."""
    ids = [u.unit_id for u in instance.units]
    w = instance.weights
    unit_of = {u.unit_id: u for u in instance.units}
    best_obj = -math.inf
    best_sets = []
    for r in range(len(ids) + 1):
        for combo in itertools.combinations(ids, r):
            mem = sum(unit_of[u].cost_components.memory for u in combo)
            lat = sum(unit_of[u].cost_components.latency for u in combo)
            hw = sum(unit_of[u].cost_components.compute for u in combo)
            b = instance.budgets
            if mem > b.memory or lat > b.latency or hw > b.hardware:
                continue
            cost = sum(
                w.lambda_lat * unit_of[u].cost_components.latency
                + w.lambda_mem * unit_of[u].cost_components.memory
                + w.lambda_comp * unit_of[u].cost_components.compute
                for u in combo
            )
            obj = eval_utility(instance.utility, combo) - w.lambda_exchange * cost
            if obj > best_obj + 1e-12:
                best_obj = obj
                best_sets = [tuple(sorted(combo))]
            elif abs(obj - best_obj) <= 1e-12:
                best_sets.append(tuple(sorted(combo)))
    return best_obj, min(best_sets)


def default_weights(**overrides) -> ObjectiveWeights:
    return ObjectiveWeights(**overrides)


def simple_budgets(memory=math.inf, tau=math.inf, **kw) -> Budgets:
    return Budgets(memory=memory, tau=tau, **kw)
