"""Finite-grid oracle sweep: every misfit pair on random discrete instances.

Prints per-pair failures, the tightest L1 lemma ratio, the tightest KL ratio
and how often the uncorrected covariance-gap cap would have been violated.
"""
import argparse

from obserr.oracle import run_oracle_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-dim", type=int, default=8)
    ap.add_argument("--max-nodes", type=int, default=20)
    args = ap.parse_args()

    suite = run_oracle_suite(args.instances, args.seed, max_dim=args.max_dim, max_nodes=args.max_nodes)
    print(f"{'pair':<22} {'n':>5} {'fail':>5} {'lemma ratio':>12} {'KL ratio':>10} {'old cap viol':>13}")
    for pair, s in suite.summary().items():
        print(f"{pair:<22} {s['instances']:>5} {s['failures']:>5} {s['lemma_max_ratio']:>12.4f} "
              f"{s['kl_max_ratio']:>10.3e} {s['published_cap_violations']:>13}")
    print(f"\n{suite.seconds:.1f} s, all ok: {suite.all_ok}")
    return 0 if suite.all_ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
