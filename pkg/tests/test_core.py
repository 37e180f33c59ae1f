import math

import numpy as np
import pytest

from tokenlab.core import (
    Budgets,
    CostVector,
    ObjectiveWeights,
    TokenClass,
    TokenUnit,
    ValueVector,
    derive_rng_stream,
    scalarized_cost,
)


class TestDeriveRngStream:
    def test_same_seed_label_reproduces_bytes(self):
        a = derive_rng_stream(42, "workload").bytes(64)
        b = derive_rng_stream(42, "workload").bytes(64)
        assert a == b

    def test_distinct_labels_distinct_sequences(self):
        a = derive_rng_stream(42, "workload").bytes(64)
        b = derive_rng_stream(42, "shapley").bytes(64)
        assert a != b

    def test_distinct_seeds_distinct_sequences(self):
        a = derive_rng_stream(42, "workload").bytes(64)
        b = derive_rng_stream(43, "workload").bytes(64)
        assert a != b

    def test_negative_seed_accepted(self):
        assert derive_rng_stream(-7, "x").bytes(8) == derive_rng_stream(-7, "x").bytes(8)

    def test_streams_statistically_unrelated(self):
        a = derive_rng_stream(1, "a").normal(size=4000)
        b = derive_rng_stream(1, "b").normal(size=4000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.06


class TestDomainTypes:
    def test_value_vector_rejects_nan(self):
        with pytest.raises(ValueError, match="finite"):
            ValueVector(accuracy=float("nan"))

    def test_cost_vector_rejects_negative(self):
        with pytest.raises(ValueError, match=">= 0"):
            CostVector(compute=-1.0)

    def test_cost_vector_memory_must_be_integer(self):
        with pytest.raises(ValueError, match="integer"):
            CostVector(memory=1.5)  # type: ignore[arg-type]

    def test_weights_need_one_positive_alpha(self):
        with pytest.raises(ValueError, match="alpha"):
            ObjectiveWeights(alpha_acc=0, alpha_safety=0, alpha_format=0, alpha_user=0)

    def test_budgets_delta_range(self):
        with pytest.raises(ValueError, match="tail_delta"):
            Budgets(tail_delta=1.5)

    def test_budgets_default_unbounded_not_zero(self):
        b = Budgets()
        assert math.isinf(b.memory) and math.isinf(b.tau)

    def test_token_unit_negative_id(self):
        with pytest.raises(ValueError, match="unit_id"):
            TokenUnit(
                unit_id=-1,
                token_class=TokenClass.INPUT,
                value_components=ValueVector(),
                cost_components=CostVector(),
            )

    def test_scalarized_cost(self):
        w = ObjectiveWeights(lambda_lat=2.0, lambda_mem=1.0, lambda_comp=0.5)
        c = CostVector(compute=4.0, memory=3, latency=1.0)
        assert scalarized_cost(c, w) == 2.0 * 1.0 + 1.0 * 3 + 0.5 * 4.0
