"""Artifact writers: run summaries, trace CSVs, sweep CSVs, and ledger files.

Every artifact carries a metadata block (schema_version, seed, resolved
scenario) so any file is reproducible from its own header. JSON is written
with sorted keys; CSV headers are '#'-prefixed comment lines. Output layout:
<outroot>/<scenario-name>/<seed>/{summary.json, traces/*.csv, ledger.bin, ...}.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .scenario import SCHEMA_VERSION, ScenarioConfig, scenario_to_dict
from .simulator import BreakevenResult, SimResult
from .trilemma import BoundReport, TrilemmaPoint

OUTPUT_ROOT_ENV = "TOKENLAB_OUTPUT_ROOT"

STEP_COLUMNS = [
    "step",
    "action_hash",
    "realized_utility",
    "memory_used",
    "latency",
    "sensing_cost",
    "alloc_cost",
    "flags",
]
CACHE_COLUMNS = ["step", "event", "block_id", "lambda_after", "occupancy"]
SPEC_COLUMNS = ["round", "draft_length", "env", "decision", "accepted_length", "realized_net"]
FRONTIER_COLUMNS = [
    "policy",
    "estimator",
    "block_size",
    "tau",
    "G",
    "R",
    "O_mean",
    "O_ci95",
    "seeds",
]
REGIME_COLUMNS = ["cv", "pressure", "policy", "goodput_mean", "goodput_ci", "label"]
BIAS_COLUMNS = ["proxy", "class", "bias", "stderr", "count"]


def output_root(cli_outdir: str | None) -> Path:
    if cli_outdir:
        return Path(cli_outdir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "out"))


def run_dir(root: Path, scenario_name: str, seed: int) -> Path:
    path = root / scenario_name / str(seed)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _num(value: float) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Mapping[str, Any]],
    meta: Mapping[str, Any],
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})
    return path


def scenario_meta(config: ScenarioConfig) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "scenario": json.dumps(scenario_to_dict(config), sort_keys=True),
    }


def write_run_artifacts(
    root: Path, scenario_name: str, config: ScenarioConfig, result: SimResult
) -> dict[str, Path]:
    base = run_dir(root, scenario_name, config.seed)
    meta = scenario_meta(config)
    paths: dict[str, Path] = {}
    paths["summary"] = write_json(
        base / "summary.json",
        {
            "schema_version": SCHEMA_VERSION,
            "seed": config.seed,
            "scenario": scenario_to_dict(config),
            "metrics": result.metrics.to_dict(),
        },
    )
    traces = base / "traces"
    paths["steps"] = write_csv(traces / "steps.csv", STEP_COLUMNS, result.step_rows, meta)
    paths["cache_events"] = write_csv(
        traces / "cache_events.csv", CACHE_COLUMNS, result.cache_rows, meta
    )
    paths["speculation"] = write_csv(
        traces / "speculation.csv", SPEC_COLUMNS, result.spec_rows, meta
    )
    ledger_bin = base / "ledger.bin"
    ledger_bin.write_bytes(result.ledger.to_bytes())
    paths["ledger_bin"] = ledger_bin
    ledger_txt = base / "ledger.txt"
    header = "".join(f"# {k}={v}\n" for k, v in meta.items())
    ledger_txt.write_text(header + result.ledger.to_text(), encoding="utf-8")
    paths["ledger_txt"] = ledger_txt
    return paths


def frontier_rows(points: Sequence[TrilemmaPoint]) -> list[dict[str, Any]]:
    rows = []
    for p in points:
        rows.append(
            {
                "policy": p.policy,
                "estimator": p.estimator,
                "block_size": p.block_size,
                "tau": _num(p.tau),
                "G": p.granularity,
                "R": _num(p.realtime_ratio),
                "O_mean": "" if p.regret_mean is None else _num(p.regret_mean),
                "O_ci95": _num(p.regret_ci95),
                "seeds": p.seeds,
            }
        )
    return rows


def write_frontier_csv(
    path: Path, points: Sequence[TrilemmaPoint], config: ScenarioConfig
) -> Path:
    return write_csv(path, FRONTIER_COLUMNS, frontier_rows(points), scenario_meta(config))


def regime_rows(result: BreakevenResult) -> list[dict[str, Any]]:
    rows = []
    for cell in result.cells:
        rows.append(
            {
                "cv": _num(cell.value_cv),
                "pressure": _num(cell.pressure),
                "policy": "fine",
                "goodput_mean": _num(cell.fine_goodput_mean),
                "goodput_ci": _num(cell.fine_goodput_ci),
                "label": cell.label,
            }
        )
        rows.append(
            {
                "cv": _num(cell.value_cv),
                "pressure": _num(cell.pressure),
                "policy": "coarse",
                "goodput_mean": _num(cell.coarse_goodput_mean),
                "goodput_ci": _num(cell.coarse_goodput_ci),
                "label": cell.label,
            }
        )
    return rows


def write_regime_csv(path: Path, result: BreakevenResult, config: ScenarioConfig) -> Path:
    return write_csv(path, REGIME_COLUMNS, regime_rows(result), scenario_meta(config))


def write_breakeven_json(path: Path, result: BreakevenResult, config: ScenarioConfig) -> Path:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "scenario": scenario_to_dict(config),
        "epsilon_sys": {str(k): v for k, v in result.epsilon_sys.items()},
        "cells": [
            {
                "cv": c.value_cv,
                "pressure": c.pressure,
                "advantage_mean": c.advantage_mean,
                "advantage_ci": c.advantage_ci,
                "label": c.label,
                "sense_alloc_per_step": c.sense_alloc_per_step,
                "bare_generation_p99": c.bare_generation_p99,
                "latency_floor_infeasible": c.latency_floor_infeasible,
            }
            for c in result.cells
        ],
    }
    return write_json(path, payload)


def write_bound_report(path: Path, report: BoundReport, seed: int) -> Path:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "scenario": {
            "N": report.n_units,
            "B": report.n_planted,
            "k": report.queries,
            "trials": report.trials,
        },
        "value_bound": report.value_bound,
        "regret_lower_bound": report.regret_lower_bound,
        "empirical_mean": report.empirical_mean,
        "stderr": report.stderr,
        "margin_sigmas": None if math.isinf(report.margin_sigmas) else report.margin_sigmas,
        "exact_policy_expectation": report.exact_expectation,
        "sensing_cost_per_trial": report.sensing_cost_per_trial,
        "passed": report.passed,
    }
    return write_json(path, payload)
