import copy
import json
import math

import pytest

from tokenlab.scenario import (
    ScenarioValidationError,
    load_instance,
    load_scenario,
    scenario_to_dict,
    validate_scenario,
)

VALID = {
    "schema_version": 1,
    "seed": 5,
    "workload": {
        "rate": 1.0,
        "tokens_per_request": 16,
        "value_cv": 0.5,
        "value_dist": "lognormal",
        "attention_bias": 0.5,
        "pressure": 1.0,
    },
    "estimator": {"kind": "oracle", "unit_cost": 0.1},
    "policy": {"kind": "greedy", "step_cost": 0.05, "params": {"cache_policy": "lru"}},
    "budgets": {"memory": 64, "tau": 2.0, "tail_delta": 0.1},
    "granularity": {"block_size": 8},
    "weights": {"lambda_exchange": 1.0},
    "costs": {"prefill_per_token": 1.0, "decode_per_token": 4.0},
    "cache": {"capacity": 128, "mu": 1.0, "gamma": 0.01},
}


class TestValidateScenario:
    def test_delta_out_of_range_reports_path(self):
        raw = copy.deepcopy(VALID)
        raw["budgets"]["tail_delta"] = 1.5
        with pytest.raises(ScenarioValidationError) as exc:
            validate_scenario(raw)
        assert any("tail_probability out of [0,1]" in e for e in exc.value.errors)

    def test_valid_config_round_trips_identically(self):
        cfg = validate_scenario(copy.deepcopy(VALID))
        again = validate_scenario(scenario_to_dict(cfg))
        assert cfg == again

    def test_missing_tau_defaults_to_unbounded(self):
        raw = copy.deepcopy(VALID)
        del raw["budgets"]["tau"]
        cfg = validate_scenario(raw)
        assert math.isinf(cfg.budgets.tau)

    def test_unknown_top_level_key_rejected(self):
        raw = copy.deepcopy(VALID)
        raw["workloads"] = {}
        with pytest.raises(ScenarioValidationError) as exc:
            validate_scenario(raw)
        assert any("workloads: unknown key" in e for e in exc.value.errors)

    def test_unknown_nested_key_reports_field_path(self):
        raw = copy.deepcopy(VALID)
        raw["workload"]["ratee"] = 2.0
        with pytest.raises(ScenarioValidationError) as exc:
            validate_scenario(raw)
        assert any("workload.ratee" in e for e in exc.value.errors)

    def test_negative_budget_rejected(self):
        raw = copy.deepcopy(VALID)
        raw["budgets"]["memory"] = -3
        with pytest.raises(ScenarioValidationError) as exc:
            validate_scenario(raw)
        assert any("budgets.memory" in e for e in exc.value.errors)

    def test_zero_block_size_rejected(self):
        raw = copy.deepcopy(VALID)
        raw["granularity"]["block_size"] = 0
        with pytest.raises(ScenarioValidationError) as exc:
            validate_scenario(raw)
        assert any("block size" in e for e in exc.value.errors)

    def test_uniform_with_positive_cv_rejected(self):
        raw = copy.deepcopy(VALID)
        raw["workload"]["value_dist"] = "uniform"
        with pytest.raises(ScenarioValidationError) as exc:
            validate_scenario(raw)
        assert any("lognormal" in e for e in exc.value.errors)

    def test_unsupported_schema_version(self):
        raw = copy.deepcopy(VALID)
        raw["schema_version"] = 99
        with pytest.raises(ScenarioValidationError):
            validate_scenario(raw)

    def test_all_errors_collected_with_paths(self):
        raw = copy.deepcopy(VALID)
        raw["budgets"]["memory"] = -1
        raw["granularity"]["block_size"] = 0
        with pytest.raises(ScenarioValidationError) as exc:
            validate_scenario(raw)
        assert len(exc.value.errors) >= 2

    def test_defaults_materialized(self):
        cfg = validate_scenario({"seed": 1})
        assert cfg.horizon >= 1
        assert math.isinf(cfg.budgets.tau)
        assert cfg.speculation.enabled is False

    def test_non_object_sections_reported(self):
        with pytest.raises(ScenarioValidationError) as exc:
            validate_scenario({"seed": 1, "workload": [1, 2], "policy": "greedy"})
        assert any("workload: expected an object" in e for e in exc.value.errors)
        assert any("policy: expected an object" in e for e in exc.value.errors)


class TestScenarioFiles:
    def test_load_with_seed_override(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps(VALID))
        cfg = load_scenario(path, seed_override=99)
        assert cfg.seed == 99

    def test_load_instance_file(self, tmp_path):
        doc = {
            "schema_version": 1,
            "utility": {"kind": "additive", "ids": [0, 1, 2], "weights": [1.0, 2.0, 4.0]},
            "units": [
                {"id": 0, "class": "input", "value": {"accuracy": 1.0}, "cost": {"memory": 1}},
                {"id": 1, "class": "output", "value": {"accuracy": 2.0}, "cost": {"memory": 1}},
                {"id": 2, "class": "tool", "value": {"accuracy": 4.0}, "cost": {"memory": 1}},
            ],
        }
        path = tmp_path / "inst.json"
        path.write_text(json.dumps(doc))
        utility, units = load_instance(path)
        assert utility.ids == (0, 1, 2)
        assert len(units) == 3
        assert units[2].token_class.value == "tool"

    def test_instance_unknown_key_rejected(self, tmp_path):
        doc = {"utility": {"kind": "additive", "ids": [0], "weights": [1.0]}, "extra": 1}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ScenarioValidationError):
            load_instance(path)
