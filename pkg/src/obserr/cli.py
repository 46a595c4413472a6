"""Command-line driver.

Exit codes: 0 success, 1 a check or bound failed, 2 config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config

OUTPUT_ROOT_ENV = "MODELERR_OUTPUT_ROOT"

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg.validate()


def _resolve_out(args, cfg):
    if args.out:
        return Path(args.out)
    out = Path(cfg.output.directory)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _print_diagnostics(result):
    for d in result.diagnostics:
        print(f"{d['kind']:>5} snr={d['snr']!r}: sigma={d['sigma_noise']:.4g} "
              f"window gap={d['window_mean_gap_l2']:.4g} var={d['window_posterior_var_mean']:.4g} "
              f"kl={d['kl_approx_best']:.4g}")


def _print_bounds(result):
    for case in result.bound_cases:
        for r in case["reports"]:
            flag = {True: "holds", False: "VIOLATED", None: "n/a"}[r["holds"]]
            bound = r["log10_prop_bound"]
            shown = "0" if bound is None else f"1e{bound:.4g}"  # log10 of a zero bound is stored as null
            print(f"{case['kind']:>5} snr={case['snr']!r} {r['pair']:<20} kl={r['exact_kl']:.4g} "
                  f"bound={shown} {flag}")


def cmd_run(args):
    from .runner import run_experiment

    cfg = _resolve_config(args)
    out = _resolve_out(args, cfg)
    result = run_experiment(cfg, out, threads=args.threads, with_bounds=True)
    _print_diagnostics(result)
    print(f"wrote {out} in {result.seconds:.1f} s (config {cfg.hash()})")
    return EXIT_OK if result.all_hold else EXIT_CHECK


def cmd_bounds(args):
    from . import io

    if args.oracle:
        from .oracle import run_oracle_suite

        suite = run_oracle_suite(n_instances=args.instances, seed=args.seed or 0)
        summary = suite.summary()
        for pair, s in summary.items():
            print(f"{pair:<20} instances={s['instances']} failures={s['failures']} "
                  f"lemma_max_ratio={s['lemma_max_ratio']:.4f} kl_max_ratio={s['kl_max_ratio']:.3g} "
                  f"published_cap_violations={s['published_cap_violations']}")
        print(f"oracle suite: {'all inequalities hold' if suite.all_ok else 'FAILURES'} ({suite.seconds:.1f} s)")
        if args.out:
            io.write_json(Path(args.out) / "oracle_summary.json", {"pairs": summary, "all_ok": suite.all_ok},
                          f"oracle-seed-{args.seed or 0}")
        return EXIT_OK if suite.all_ok else EXIT_CHECK

    from .runner import run_experiment

    cfg = _resolve_config(args)
    out = _resolve_out(args, cfg)
    result = run_experiment(cfg, out, threads=args.threads, with_bounds=True, write_cases=False)
    _print_bounds(result)
    print(f"wrote {out / 'bound_report.json'}")
    return EXIT_OK if result.all_hold else EXIT_CHECK


def cmd_selftest(args):
    from .checks import run_selftest, summary_hash

    cfg = _resolve_config(args) if args.config else None
    results, seconds = run_selftest(perturb_operator=args.inject_operator_fault, cfg=cfg)
    for r in results:
        print(r.line())
    print(f"summary hash {summary_hash(results)} ({seconds:.1f} s)")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_mesh_export(args):
    from .pde.fem import default_velocity
    from .pde.mesh import build_mesh, save_mesh_csv

    cfg = _resolve_config(args)
    out = _resolve_out(args, cfg)
    d = cfg.discretization
    mesh = build_mesh(d.nodes_per_axis, d.time_elements)
    save_mesh_csv(mesh, out)
    vel = default_velocity(mesh)
    with open(out / "velocity.csv", "w") as fh:
        fh.write("node_id,vx,vy\n")
        for k, (vx, vy) in enumerate(vel):
            fh.write(f"{k},{float(vx)!r},{float(vy)!r}\n")
    print(f"wrote {mesh.n_space} nodes, {len(mesh.triangles)} triangles to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="obserr", description="Observed model error testbed and bound certification.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config; omitted -> reference defaults")
        p.add_argument("--out", help=f"output directory (default: config output.directory under ${OUTPUT_ROOT_ENV})")
        p.add_argument("--seed", type=int, help="derive every seed from this integer")
        p.add_argument("--threads", type=int, default=1, help="parallel (operator, SNR) cases")

    p = sub.add_parser("run", help="full pipeline with diagnostics, bounds and CSV output")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bounds", help="bound certification reports")
    common(p)
    p.add_argument("--oracle", action="store_true", help="finite-grid oracle suite instead of the testbed")
    p.add_argument("--instances", type=int, default=200, help="oracle instances per pair")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("selftest", help="invariant checks; nonzero exit on failure")
    common(p)
    p.add_argument("--inject-operator-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("mesh-export", help="write nodes.csv, triangles.csv and velocity.csv")
    common(p)
    p.set_defaults(func=cmd_mesh_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # anything the schema check let through fails inside the numerics
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
