"""Command-line entry point and experiment harness.

Commands: gen-model, run, smin-stats, verify, sweep, tree.  Every output
file embeds the fully resolved configuration and master seed (JSON reports
as a "config" object, CSVs as a leading '# config: ...' comment line), so
any report can be reproduced bit for bit by re-running its embedded config.

Exit codes: 0 success, 2 usage or parameter error, 3 degenerate node,
4 verification failure, 5 file I/O error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import math
import os
import sys

import numpy as np

from .costmodel import runtime_summary
from .estimators import (
    AmbiguityError,
    BudgetPolicy,
    DegenerateNodeError,
    EstimateReport,
    default_phi_grid,
    sandwich_test,
    sequential_baseline,
    two_layer_estimate,
)
from .measurement import RngStream, UsageLedger
from .spectral import (
    ModelFormatError,
    ModelParameterError,
    SpectralModel,
    amplitude_moduli,
    exact_amplitude,
    generate_model,
    load_model,
    save_model,
)
from .sumtree import SplitPolicy, SumTree, build_tree, degenerate_chain_tree, dump_tree

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DEGENERATE = 3
EXIT_VERIFY = 4
EXIT_IO = 5

# Stream purpose for tree construction; estimator purposes are 0..3.
_P_TREE = 9

WORKERS_ENV = "SANDWICH_QPE_WORKERS"

NODE_CSV_COLUMNS = [
    "row_type", "height", "position", "value", "a", "b", "omega_hat",
    "r_a_hat", "r_b_hat", "r_ab_hat", "s1_hat", "s2_hat",
    "shots_r", "shots_s1", "shots_s2", "clamped",
    "theta_k_hat", "theta1_hat", "theta_k_exact", "angular_error",
    "u_applications",
]

SWEEP_CSV_COLUMNS = [
    "mode", "k", "seed", "status", "u_applications", "sprotis_applications",
    "shots", "theta_k_hat", "theta_k_exact", "angular_error",
    "tree_smin", "r_min", "fit_slope", "ratio",
]

SMIN_CSV_COLUMNS = [
    "row_type", "tree_index", "s_min", "s_min_no_root", "node_count", "h_max",
    "r_min", "q05", "q25", "q50", "q75", "q95",
]


def _model_kind_cli(kind: str) -> str:
    return kind.replace("-", "_")


def resolve_model(spec: dict) -> SpectralModel:
    if "path" in spec:
        return load_model(spec["path"])
    return generate_model(
        spec["kind"], spec["size"], spec["seed"], **spec.get("params", {})
    )


def _model_spec_from_args(args) -> dict:
    if getattr(args, "model", None):
        return {"path": args.model}
    if not getattr(args, "kind", None):
        raise ModelParameterError("provide either --model or --kind")
    kind = _model_kind_cli(args.kind)
    params = {}
    if kind == "two_level":
        params["gap"] = args.gap
    elif kind == "ground_dominated":
        if args.eta is None:
            raise ModelParameterError("ground-dominated models need --eta")
        params["eta"] = args.eta
    elif kind == "clustered":
        params["clusters"] = args.clusters
        params["width"] = args.width
    return {"kind": kind, "size": args.size, "seed": args.model_seed, "params": params}


def run_from_config(config: dict) -> dict:
    """Execute one run; pure function of the config dictionary."""
    model = resolve_model(config["model"])
    k = int(config["k"])
    mode = config["mode"]
    seed = int(config["seed"])
    policy = BudgetPolicy(
        q=config["q"],
        epsilon=config["epsilon"],
        phi1=config["phi1"],
        s_floor=config["s_floor"],
        min_shots=config["min_shots"],
        budget_scale=config["budget_scale"],
        theta1_scale=config["theta1_scale"],
        calibrate=config["calibrate"],
        reuse_magnitudes=config["reuse_magnitudes"],
    )
    stream = RngStream(seed)
    ledger = UsageLedger()
    result: dict = {"config": config, "master_seed": seed, "mode": mode, "k": k}

    if mode == "hadamard-exact":
        amp = exact_amplitude(model, k)
        result.update(
            theta_k_hat=amp.argument,
            theta_k_exact=amp.argument,
            theta1_hat=exact_amplitude(model, 1).argument,
            angular_error=0.0,
            r_k=amp.modulus,
            ledger=ledger.as_dict(),
        )
        return result

    if mode == "two-layer":
        a, b, c = (int(v) for v in config["abc"])
        grid = default_phi_grid(int(config["grid_points"]))
        known = {
            "theta_a": exact_amplitude(model, a).argument,
            "theta_b": exact_amplitude(model, b).argument,
            "theta_c": exact_amplitude(model, c).argument,
            "theta_ab": exact_amplitude(model, a + b).argument,
            "theta_bc": exact_amplitude(model, b + c).argument,
        }
        theta = two_layer_estimate(
            model, a, b, c, grid, int(config["shots_per_point"]), known,
            stream, ledger, exact=config["exact"],
        )
        exact_theta = exact_amplitude(model, a + b + c).argument
        from .spectral import angular_distance

        result.update(
            abc=[a, b, c],
            theta_k_hat=theta,
            theta_k_exact=exact_theta,
            angular_error=angular_distance(theta, exact_theta),
            ledger=ledger.as_dict(),
        )
        return result

    if mode == "sequential":
        report = sequential_baseline(
            model, k, policy, stream, ledger, exact=config["exact"]
        )
        tree = degenerate_chain_tree(k)
    elif mode == "sandwich":
        tree = build_tree(
            k,
            SplitPolicy(stream=stream.child(_P_TREE), x_min=config["x_min"]),
            leaf_cutoff=config["leaf_cutoff"],
        )
        report = sandwich_test(
            model, k, tree, policy, stream, ledger, exact=config["exact"]
        )
    else:
        raise ModelParameterError(f"unknown mode {mode!r}")

    result.update(_report_payload(report, tree))
    return result


def _report_payload(report: EstimateReport, tree: SumTree) -> dict:
    payload = {
        "theta_k_hat": report.theta_k_hat,
        "theta1_hat": report.theta1_hat,
        "theta_k_exact": report.theta_k_exact,
        "angular_error": report.angular_error,
        "phi1": report.phi1,
        "q": report.q,
        "epsilon": report.epsilon,
        "exact_mode": report.exact_mode,
        "ledger": report.ledger.as_dict(),
        "tree": {
            "smin": report.tree_smin,
            "smin_no_root": report.tree_smin_no_root,
            "node_count": tree.node_count,
            "h_max": tree.h_max,
            "nontrivial_count": len(report.node_estimates),
        },
        "leaves": [
            {
                "value": leaf.value,
                "count": leaf.count,
                "theta_hat": leaf.theta_hat,
                "shots": leaf.shots,
            }
            for leaf in report.leaf_estimates
        ],
        "nodes": [
            {
                "height": est.height,
                "position": est.position,
                "value": est.value,
                "a": est.a,
                "b": est.b,
                "omega_hat": est.omega_hat,
                "r_a_hat": est.r_a_hat,
                "r_b_hat": est.r_b_hat,
                "r_ab_hat": est.r_ab_hat,
                "s1_hat": est.s1_hat,
                "s2_hat": est.s2_hat,
                "shots_r": est.shots_r_a,
                "shots_s1": est.shots_s1,
                "shots_s2": est.shots_s2,
                "clamped": est.clamped,
            }
            for est in report.node_estimates
        ],
    }
    if report.plan is not None:
        payload["plan"] = {
            "scale": report.plan.scale,
            "theta1_shots": report.plan.theta1_shots,
            "predicted_u_applications": report.plan.predicted_u_applications,
        }
    return payload


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _csv_text(columns, rows, config: dict) -> str:
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row.get(c, "") for c in columns})
    return buf.getvalue()


def _node_csv_rows(result: dict) -> list[dict]:
    rows = []
    for node in result.get("nodes", []):
        rows.append({"row_type": "node", **node})
    rows.append(
        {
            "row_type": "summary",
            "theta_k_hat": result["theta_k_hat"],
            "theta1_hat": result.get("theta1_hat"),
            "theta_k_exact": result["theta_k_exact"],
            "angular_error": result["angular_error"],
            "u_applications": result["ledger"]["u_applications"],
        }
    )
    return rows


# ----------------------------------------------------------------------
# Command handlers
# ----------------------------------------------------------------------

def cmd_gen_model(args) -> int:
    spec = _model_spec_from_args(args)
    if "path" in spec:
        raise ModelParameterError("gen-model needs generator flags, not --model")
    model = resolve_model(spec)
    save_model(model, args.out)
    print(f"wrote {args.out}: {model.label} ({len(model)} levels)")
    return EXIT_OK


def _run_config_from_args(args) -> dict:
    return {
        "model": _model_spec_from_args(args),
        "mode": args.mode,
        "k": args.k,
        "epsilon": args.epsilon,
        "q": args.q,
        "phi1": args.phi1,
        "x_min": args.x_min,
        "seed": args.seed,
        "leaf_cutoff": args.leaf_cutoff,
        "exact": bool(args.exact),
        "budget_scale": args.budget_scale,
        "theta1_scale": args.theta1_scale,
        "s_floor": args.s_floor,
        "min_shots": args.min_shots,
        "calibrate": not args.no_calibrate,
        "reuse_magnitudes": bool(args.reuse_magnitudes),
        "abc": _parse_abc(args.abc, args.k),
        "grid_points": args.grid_points,
        "shots_per_point": args.shots_per_point,
    }


def _parse_abc(text: str | None, k: int) -> list[int]:
    if text:
        parts = [int(v) for v in text.split(",")]
        if len(parts) != 3 or min(parts) < 1:
            raise ModelParameterError("--abc needs three positive integers a,b,c")
        return parts
    third = max(1, k // 3)
    return [third, third, max(1, k - 2 * third)]


def cmd_run(args) -> int:
    config = _run_config_from_args(args)
    result = run_from_config(config)
    if args.report:
        _write_json(args.report, result)
    if args.csv:
        text = _csv_text(NODE_CSV_COLUMNS, _node_csv_rows(result), config)
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(text)
    err = result["angular_error"]
    print(
        f"mode={result['mode']} k={result['k']} theta_hat={result['theta_k_hat']:+.6f} "
        f"exact={result['theta_k_exact']:+.6f} error={err:.3e} "
        f"u_apps={result['ledger']['u_applications']}"
    )
    return EXIT_OK


def cmd_smin_stats(args) -> int:
    spec = _model_spec_from_args(args)
    model = resolve_model(spec)
    k = int(args.k)
    config = {
        "model": spec, "k": k, "trees": args.trees, "x_min": args.x_min,
        "seed": args.seed, "leaf_cutoff": args.leaf_cutoff,
    }
    moduli = amplitude_moduli(model, k)
    r_min = float(moduli[1:].min())
    stream = RngStream(args.seed)
    rows = []
    smins = []
    for i in range(args.trees):
        tree = build_tree(
            k,
            SplitPolicy(stream=stream.child(i), x_min=args.x_min),
            leaf_cutoff=args.leaf_cutoff,
        )
        values = tree.all_values()
        pos = values[values >= 1]
        s_min = float(moduli[np.unique(pos)].min())
        rest = values[1:]
        s_min_nr = float(moduli[np.unique(rest[rest >= 1])].min())
        smins.append(s_min)
        rows.append(
            {
                "row_type": "tree",
                "tree_index": i,
                "s_min": s_min,
                "s_min_no_root": s_min_nr,
                "node_count": tree.node_count,
                "h_max": tree.h_max,
            }
        )
    q05, q25, q50, q75, q95 = np.quantile(smins, [0.05, 0.25, 0.5, 0.75, 0.95])
    rows.append(
        {
            "row_type": "summary",
            "s_min": min(smins),
            "r_min": r_min,
            "q05": q05, "q25": q25, "q50": q50, "q75": q75, "q95": q95,
        }
    )
    text = _csv_text(SMIN_CSV_COLUMNS, rows, config)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(
        f"{args.trees} trees at k={k}: s_min quantiles "
        f"[{q05:.4f}, {q50:.4f}, {q95:.4f}], exhaustive r_min={r_min:.4e}"
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification import run_verification

    results = run_verification(args.n, args.seeds, fault=args.fault_inject)
    all_passed = True
    for check in results:
        status = "PASS" if check.passed else "FAIL"
        print(
            f"{status} {check.name}: worst error {check.worst_error:.3e} "
            f"(tolerance {check.tolerance:.0e})"
        )
        all_passed &= check.passed
    return EXIT_OK if all_passed else EXIT_VERIFY


def _sweep_one(config: dict) -> dict:
    row = {"mode": config["mode"], "k": config["k"], "seed": config["seed"]}
    try:
        result = run_from_config(config)
        row.update(
            status="ok",
            u_applications=result["ledger"]["u_applications"],
            sprotis_applications=result["ledger"]["sprotis_applications"],
            shots=result["ledger"]["shots"],
            theta_k_hat=result["theta_k_hat"],
            theta_k_exact=result["theta_k_exact"],
            angular_error=result["angular_error"],
            tree_smin=result.get("tree", {}).get("smin"),
        )
    except DegenerateNodeError as exc:
        row.update(status=f"degenerate:{exc.value}")
    return row


def cmd_sweep(args) -> int:
    ks = [int(v) for v in args.k_list.split(",") if v.strip()]
    if not ks:
        raise ModelParameterError("--k-list must name at least one k")
    seeds = [int(v) for v in args.seeds.split(",") if v.strip()]
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if not seeds or not modes:
        raise ModelParameterError("--seeds and --modes must be nonempty")
    base = _run_config_from_args(args)
    config = {**base, "k_list": ks, "seed_list": seeds, "mode_list": modes}
    del config["k"], config["seed"], config["mode"]

    jobs = []
    for mode in modes:
        for k in ks:
            for seed in seeds:
                jobs.append({**base, "mode": mode, "k": k, "seed": seed})
    workers = args.workers or int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    rows.sort(key=lambda r: (r["mode"], r["k"], r["seed"]))

    model = resolve_model(base["model"])
    r_min_cache = {k: float(amplitude_moduli(model, k)[1:].min()) for k in ks}
    for row in rows:
        row["r_min"] = r_min_cache[row["k"]]

    ok_rows = [r for r in rows if r["status"] == "ok"]
    if ok_rows:
        summary = runtime_summary(ok_rows)
        slope_by_mode = summary["slopes"]
        ratio_key = "ratio_to_" + summary["reference_mode"]
        enriched = {
            (r["mode"], r["k"], r["seed"]): r for r in summary["rows"]
        }
        for row in rows:
            key = (row["mode"], row["k"], row["seed"])
            row["fit_slope"] = slope_by_mode.get(row["mode"])
            if key in enriched:
                row["ratio"] = enriched[key][ratio_key]
    text = _csv_text(SWEEP_CSV_COLUMNS, rows, config)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    failed = [r for r in rows if r["status"] != "ok"]
    for mode in modes:
        slope = next((r.get("fit_slope") for r in rows if r["mode"] == mode), None)
        if slope is not None and not (isinstance(slope, float) and math.isnan(slope)):
            print(f"{mode}: fitted log-log slope {slope:.3f}")
    print(f"wrote {args.out}: {len(rows)} rows, {len(failed)} failed")
    return EXIT_DEGENERATE if failed else EXIT_OK


def cmd_tree(args) -> int:
    if args.chain:
        tree = degenerate_chain_tree(args.k)
    else:
        tree = build_tree(
            args.k,
            SplitPolicy(stream=RngStream(args.seed).child(_P_TREE), x_min=args.x_min),
            leaf_cutoff=args.leaf_cutoff,
        )
    text = dump_tree(tree)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(
                "# config: "
                + json.dumps(
                    {"k": args.k, "x_min": args.x_min, "seed": args.seed,
                     "chain": bool(args.chain), "leaf_cutoff": args.leaf_cutoff},
                    sort_keys=True,
                )
                + "\n"
            )
            fh.write(text)
        print(f"wrote {args.out}: {tree.node_count} nodes, h_max={tree.h_max}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ----------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------

def _add_model_args(parser, require_out=False):
    parser.add_argument("--model", help="path to a model JSON file")
    parser.add_argument(
        "--kind",
        choices=["two-level", "clustered", "uniform-random", "ground-dominated"],
        help="generator family (alternative to --model)",
    )
    parser.add_argument("--size", type=int, default=16, help="number of levels")
    parser.add_argument(
        "--model-seed", type=int, default=0, help="generator seed (default 0)"
    )
    parser.add_argument("--gap", type=float, default=math.pi, help="two-level gap")
    parser.add_argument("--eta", type=float, help="ground-state weight")
    parser.add_argument("--clusters", type=int, default=3)
    parser.add_argument("--width", type=float, default=0.05)


def _add_run_args(parser):
    parser.add_argument("--k", type=int, required=True, help="target power")
    parser.add_argument("--epsilon", type=float, default=0.05)
    parser.add_argument("--q", type=float, default=2.0)
    parser.add_argument("--phi1", type=float, default=math.pi / 4)
    parser.add_argument("--x-min", type=float, default=1.0 / 3.0)
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--leaf-cutoff", type=int, default=1)
    parser.add_argument("--exact", action="store_true", help="disable shot noise")
    parser.add_argument("--budget-scale", type=float, default=1.0)
    parser.add_argument("--theta1-scale", type=float, default=16.0)
    parser.add_argument("--s-floor", type=float, default=1e-3)
    parser.add_argument("--min-shots", type=int, default=100)
    parser.add_argument("--no-calibrate", action="store_true")
    parser.add_argument("--reuse-magnitudes", action="store_true")
    parser.add_argument("--abc", help="two-layer powers a,b,c")
    parser.add_argument("--grid-points", type=int, default=6)
    parser.add_argument("--shots-per-point", type=int, default=100000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sandwich-qpe",
        description="Phase estimation of <psi|U^k|psi> via sandwiched "
        "selective phase rotations over random binary sum trees.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="generate and save a spectral model")
    _add_model_args(p)
    p.add_argument("--out", required=True, help="output model JSON path")
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("run", help="run one estimation")
    _add_model_args(p)
    _add_run_args(p)
    p.add_argument(
        "--mode",
        choices=["sandwich", "sequential", "hadamard-exact", "two-layer"],
        default="sandwich",
    )
    p.add_argument("--report", help="output report JSON path")
    p.add_argument("--csv", help="output per-node CSV path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("smin-stats", help="sample trees and tabulate s_min")
    _add_model_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trees", type=int, default=1000)
    p.add_argument("--x-min", type=float, default=1.0 / 3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--leaf-cutoff", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_smin_stats)

    p = sub.add_parser("verify", help="run the dense-oracle equivalence suite")
    p.add_argument("--n", type=int, default=3, help="qubit count (<= 12)")
    p.add_argument("--seeds", type=int, default=20, help="number of instances")
    p.add_argument(
        "--fault-inject",
        action="store_true",
        help=argparse.SUPPRESS,  # harness self-test: flips a sign, must fail
    )
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="batch runs over k, seeds, and modes")
    _add_model_args(p)
    _add_run_args(p)
    p.add_argument("--k-list", required=True, help="comma-separated powers")
    p.add_argument("--seeds", default="0", help="comma-separated master seeds")
    p.add_argument("--modes", default="sandwich,sequential")
    p.add_argument("--workers", type=int, default=0, help=f"0 = ${WORKERS_ENV} or 1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tree", help="build and dump one sum tree")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--x-min", type=float, default=1.0 / 3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chain", action="store_true")
    p.add_argument("--leaf-cutoff", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tree)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DegenerateNodeError as exc:
        print(f"degenerate node: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except AmbiguityError as exc:
        print(f"ambiguous fit: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ModelFormatError as exc:
        print(f"model file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ModelParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
