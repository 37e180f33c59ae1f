"""Command-line entry point.

Subcommands: run, sweep, verify-bound, breakeven, audit, attribution.
Exit codes: 0 success, 1 validation error, 2 verification failure (violated
bound or tampered ledger). Output root comes from --outdir or the
TOKENLAB_OUTPUT_ROOT environment variable (default ./out).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import artifacts, simulator, trilemma
from .accounting import Ledger
from .core import derive_rng_stream
from .scenario import (
    ScenarioValidationError,
    load_instance,
    load_scenario,
)
from .valuation import (
    EstimatorSpec,
    LabeledUnit,
    Provenance,
    bias_profile,
    fit_static_predictor,
    leave_one_out,
    shapley_exact,
    shapley_mc,
)
from .workload import generate_workload


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokenlab",
        description="Desk-scale simulator and policy lab for computational token economics",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario; emit summary.json + traces + ledger")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--outdir", default=None)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="trilemma frontier sweep; emits frontier.csv")
    p_sweep.add_argument("--scenario", required=True)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--outdir", default=None)
    p_sweep.add_argument("--seeds", type=int, default=24, help="replicates per grid cell")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument(
        "--block-sizes", type=int, nargs="*", default=[], help="extra grid block sizes"
    )
    p_sweep.add_argument(
        "--taus", type=float, nargs="*", default=[],
        help="extra grid taus (crossed with --block-sizes)",
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_bound = sub.add_parser("verify-bound", help="Monte Carlo check of the planted lower bound")
    p_bound.add_argument("--N", type=int, required=True)
    p_bound.add_argument("--B", type=int, required=True)
    p_bound.add_argument("--k", type=int, required=True)
    p_bound.add_argument("--trials", type=int, default=10000)
    p_bound.add_argument("--seed", type=int, default=0)
    p_bound.add_argument("--outdir", default=None)
    p_bound.set_defaults(func=cmd_verify_bound)

    p_break = sub.add_parser("breakeven", help="CV x pressure regime map; emits regime.csv")
    p_break.add_argument("--scenario", required=True)
    p_break.add_argument("--seed", type=int, default=None)
    p_break.add_argument("--outdir", default=None)
    p_break.add_argument(
        "--cv-grid", type=float, nargs="*", default=[0.0, 0.25, 0.5, 1.0, 2.0]
    )
    p_break.add_argument(
        "--pressure-grid", type=float, nargs="*", default=[1.0, 1.3, 1.6, 2.0]
    )
    p_break.add_argument("--seeds", type=int, default=12)
    p_break.add_argument("--jobs", type=int, default=1)
    p_break.set_defaults(func=cmd_breakeven)

    p_audit = sub.add_parser("audit", help="verify a ledger file's hash chain")
    p_audit.add_argument("--ledger", required=True)
    p_audit.set_defaults(func=cmd_audit)

    p_attr = sub.add_parser(
        "attribution", help="value vectors for an instance file, or a proxy bias profile"
    )
    p_attr.add_argument("--instance", default=None)
    p_attr.add_argument(
        "--estimator",
        default="shapley_exact",
        choices=["shapley_exact", "shapley_mc", "leave_one_out"],
    )
    p_attr.add_argument("--samples", type=int, default=2000)
    p_attr.add_argument("--seed", type=int, default=0)
    p_attr.add_argument("--bias", action="store_true", help="emit a per-class proxy bias CSV")
    p_attr.add_argument("--scenario", default=None, help="scenario for --bias corpora")
    p_attr.add_argument("--outdir", default=None)
    p_attr.set_defaults(func=cmd_attribution)
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario, seed_override=args.seed)
    result = simulator.run(config)
    root = artifacts.output_root(args.outdir)
    name = Path(args.scenario).stem
    paths = artifacts.write_run_artifacts(root, name, config, result)
    print(f"run ok: goodput={result.metrics.goodput:.6g} regret={result.metrics.regret}")
    print(f"summary: {paths['summary']}")
    return 0


def _sweep_stream_from(config) -> trilemma.SweepStream:
    tpr = config.workload.tokens_per_request
    if not isinstance(tpr, int):
        raise ScenarioValidationError(
            ["workload.tokens_per_request: the frontier sweep needs a fixed request size"]
        )
    total = 4 * tpr
    frac = (
        config.budgets.memory / total
        if np.isfinite(config.budgets.memory)
        else 0.5
    )
    return trilemma.SweepStream(
        n_requests=4,
        tokens_per_request=tpr,
        value_dist=config.workload.value_dist,
        value_cv=config.workload.value_cv,
        attention_bias=config.workload.attention_bias,
        memory_fraction=min(0.9, frac),
    )


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario, seed_override=args.seed)
    spec = _sweep_stream_from(config)
    tau = config.budgets.tau if np.isfinite(config.budgets.tau) else 1.0
    cells = trilemma.table1_presets(tau=tau)
    for bs in args.block_sizes:
        for extra_tau in args.taus or [tau]:
            cells.append(
                trilemma.SweepCell(
                    name=f"grid_b{bs}_t{extra_tau}",
                    policy=config.policy,
                    estimator=config.estimator,
                    block_size=bs,
                    tau=extra_tau,
                )
            )
    points = trilemma.frontier_sweep(cells, spec, seeds=args.seeds, base_seed=config.seed, jobs=args.jobs)
    root = artifacts.output_root(args.outdir)
    base = artifacts.run_dir(root, Path(args.scenario).stem, config.seed)
    path = artifacts.write_frontier_csv(base / "frontier.csv", points, config)
    for p in points:
        o = "missing" if p.regret_mean is None else f"{p.regret_mean:.4g}±{p.regret_ci95:.4g}"
        print(f"{p.name or p.policy}: G={p.granularity} R={p.realtime_ratio:.4g} O={o}")
    print(f"frontier: {path}")
    return 0


def cmd_verify_bound(args: argparse.Namespace) -> int:
    stream = derive_rng_stream(args.seed, "verify-bound")
    report = trilemma.mc_verify_bound(args.N, args.B, args.k, args.trials, stream)
    root = artifacts.output_root(args.outdir)
    base = artifacts.run_dir(root, "verify-bound", args.seed)
    path = artifacts.write_bound_report(
        base / f"bound_N{args.N}_B{args.B}_k{args.k}.json", report, args.seed
    )
    print(
        f"bound={report.value_bound:.6g} empirical={report.empirical_mean:.6g} "
        f"stderr={report.stderr:.3g} exact={report.exact_expectation:.6g} "
        f"passed={report.passed}"
    )
    print(f"report: {path}")
    return 0 if report.passed else 2


def cmd_breakeven(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario, seed_override=args.seed)
    result = simulator.breakeven_sweep(
        config, list(args.cv_grid), list(args.pressure_grid), seeds=args.seeds, jobs=args.jobs
    )
    root = artifacts.output_root(args.outdir)
    base = artifacts.run_dir(root, Path(args.scenario).stem, config.seed)
    csv_path = artifacts.write_regime_csv(base / "regime.csv", result, config)
    artifacts.write_breakeven_json(base / "breakeven.json", result, config)
    for cell in result.cells:
        print(
            f"cv={cell.value_cv:g} pressure={cell.pressure:g} "
            f"adv={cell.advantage_mean:+.4g}±{cell.advantage_ci:.4g} label={cell.label}"
        )
    print(f"epsilon_sys: { {str(k): v for k, v in result.epsilon_sys.items()} }")
    print(f"regime map: {csv_path}")
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    blob = Path(args.ledger).read_bytes()
    try:
        ledger = Ledger.from_bytes(blob)
    except ValueError as exc:
        print(f"audit failed: malformed ledger file ({exc})")
        return 2
    bad = ledger.verify_chain()
    if bad is None:
        print(f"audit ok: {len(ledger.entries)} entries, head={ledger.head_hex}")
        return 0
    print(f"audit failed: first tampered sequence {bad}")
    return 2


_BIAS_PROXIES = [
    Provenance.ORACLE,
    Provenance.RECENCY,
    Provenance.POSITION,
    Provenance.ATTENTION_SURROGATE,
    Provenance.STATIC_PREDICTOR,
]


def _bias_corpus(config) -> list[LabeledUnit]:
    stream = derive_rng_stream(config.seed, "bias-corpus")
    requests = generate_workload(config.workload, config.horizon, stream)
    corpus: list[LabeledUnit] = []
    for req in requests:
        for t in req.tokens:
            corpus.append(
                LabeledUnit(
                    unit=t, true_value=req.true_values[t.unit_id], context=req.contexts[t.unit_id]
                )
            )
    return corpus


def cmd_attribution(args: argparse.Namespace) -> int:
    root = artifacts.output_root(args.outdir)
    if args.bias:
        if not args.scenario:
            print("attribution --bias requires --scenario", file=sys.stderr)
            return 1
        config = load_scenario(args.scenario)
        corpus = _bias_corpus(config)
        calib_stream = derive_rng_stream(config.seed, "bias-calibration")
        calib = generate_workload(config.workload, config.horizon, calib_stream)
        calib_corpus = [
            LabeledUnit(unit=t, true_value=r.true_values[t.unit_id], context=r.contexts[t.unit_id])
            for r in calib
            for t in r.tokens
        ]
        table = fit_static_predictor(calib_corpus)
        rows = []
        for kind in _BIAS_PROXIES:
            spec = EstimatorSpec.with_defaults(kind, predictor_table=table if kind is Provenance.STATIC_PREDICTOR else None)
            profile = bias_profile(spec, corpus)
            for cls in sorted(profile, key=lambda c: c.value):
                entry = profile[cls]
                rows.append(
                    {
                        "proxy": kind.value,
                        "class": cls.value,
                        "bias": repr(entry.bias),
                        "stderr": repr(entry.stderr),
                        "count": entry.count,
                    }
                )
        base = artifacts.run_dir(root, Path(args.scenario).stem, config.seed)
        path = artifacts.write_csv(
            base / "bias.csv", artifacts.BIAS_COLUMNS, rows, artifacts.scenario_meta(config)
        )
        print(f"bias profile: {path}")
        return 0
    if not args.instance:
        print("attribution requires --instance (or --bias --scenario)", file=sys.stderr)
        return 1
    utility, units = load_instance(args.instance)
    kind = Provenance(args.estimator)
    spec = EstimatorSpec.with_defaults(kind, samples=args.samples)
    if kind is Provenance.SHAPLEY_EXACT:
        values = shapley_exact(utility)
        stderr = np.zeros(len(values))
    elif kind is Provenance.LEAVE_ONE_OUT:
        values = leave_one_out(utility)
        stderr = np.zeros(len(values))
    else:
        stream = derive_rng_stream(args.seed, "attribution")
        values, stderr = shapley_mc(utility, args.samples, stream)
    payload = {
        "schema_version": 1,
        "seed": args.seed,
        "scenario": {"instance": str(args.instance), "estimator": kind.value, "samples": args.samples},
        "values": [
            {"unit_id": uid, "mean": float(values[i]), "stderr": float(stderr[i])}
            for i, uid in enumerate(utility.ids)
        ],
        "sensing_cost_charged_total": spec.unit_cost * len(utility.ids),
    }
    base = artifacts.run_dir(root, Path(args.instance).stem, args.seed)
    path = artifacts.write_json(base / "attribution.json", payload)
    print(f"attribution: {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioValidationError as exc:
        for err in exc.errors:
            print(f"validation error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
