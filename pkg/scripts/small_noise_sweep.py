"""Best-posterior error on the source window as the noise level shrinks.

With the pde-residual operator the model error is invisible to the data, so
the error keeps falling; the interpolating operator stalls at a floor set by
the unmodelled initial condition.
"""
import argparse

import numpy as np

from obserr.config import ExperimentConfig
from obserr.experiment import build_testbed, setup_kind
from obserr.observation import small_noise_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--decades", type=int, default=8, help="scales 1e-1 .. 1e-decades")
    args = ap.parse_args()

    tb = build_testbed(ExperimentConfig())
    scales = np.logspace(-1, -args.decades, args.decades)
    table = {}
    for kind in ("basic", "pde"):
        ks = setup_kind(tb, kind)
        signal = ks.operator.apply(tb.truth_state)
        table[kind] = small_noise_study(ks.forward, ks.observed_error, tb.prior, tb.truth, signal,
                                        ks.index_set, scales)
    print(f"{'scale':>8} {'basic rel err':>14} {'pde rel err':>12}")
    for b, p in zip(table["basic"], table["pde"]):
        print(f"{b['scale']:>8.0e} {b['relative_error']:>14.3e} {p['relative_error']:>12.3e}")


if __name__ == "__main__":
    main()
