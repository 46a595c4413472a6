"""Orchestrates a full run: every (operator, SNR) case, diagnostics, bounds and output files.

Layout under the output directory::

    run_meta.json
    bound_report.json
    <kind>/snr-<scale>/means.csv, covdiag.csv, projection.csv
    <kind>/small_noise.csv
"""
from __future__ import annotations

import platform
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .experiment import (build_testbed, certify_case, prepare_enhanced, prepare_joint, run_case, setup_kind)
from .gaussian import gaussian_kl
from .observation import small_noise_study

MEANS_HEADER = ["t", "prior_mean", "m_approx", "m_best", "truth"]
COVDIAG_HEADER = ["t", "prior_var", "posterior_var", "in_window"]
PROJECTION_HEADER = ["t", "truth", "projected", "on_index"]
SMALL_NOISE_HEADER = ["scale", "sigma", "relative_error"]


def git_hash(cwd=None):
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=cwd or Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def case_diagnostics(tb, ks, case):
    window = ks.index_set
    post = case.posteriors
    gap = case.mean_gap
    ref = case.mean_gap_reference
    scale = max(np.linalg.norm(ref), np.finfo(float).tiny)
    return {
        "kind": case.kind,
        "snr": case.snr,
        "sigma_noise": case.data.sigma_noise,
        "signal_min": float(np.abs(case.data.signal).min()),
        "signal_median": float(np.median(np.abs(case.data.signal))),
        "signal_max": float(np.abs(case.data.signal).max()),
        "window_mean_gap_l2": float(np.linalg.norm(gap[window])),
        "mean_gap_rel_to_best": float(np.linalg.norm(gap) / np.linalg.norm(post.best.mean)),
        "mean_gap_identity_rel": float(np.linalg.norm(gap - ref) / scale),
        "window_posterior_var_mean": float(np.diag(post.approx.cov.entries)[window].mean()),
        "kl_approx_best": gaussian_kl(post.approx, post.best),
        "observed_error_max": float(np.abs(ks.observed_error).max()),
        "projection": case.projection_report,
    }


def _case_files(tb, ks, case, directory, config_hash):
    t = tb.mesh.times
    post = case.posteriors
    prior_mean = tb.prior.mean
    io.write_csv(directory / "means.csv", MEANS_HEADER,
                 zip(t, prior_mean, post.approx.mean, post.best.mean, tb.truth), config_hash)
    on = np.isin(np.arange(t.size), ks.index_set)
    io.write_csv(directory / "covdiag.csv", COVDIAG_HEADER,
                 zip(t, np.diag(tb.prior.cov.entries), np.diag(post.approx.cov.entries), on.astype(int)),
                 config_hash)
    io.write_csv(directory / "projection.csv", PROJECTION_HEADER,
                 zip(t, tb.truth, case.projection, on.astype(int)), config_hash)


@dataclass
class RunResult:
    out_dir: Path
    diagnostics: list
    bound_cases: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def all_hold(self):
        return all(r["holds"] is not False for c in self.bound_cases for r in c["reports"])


def _snr_dir(out, kind, snr):
    return out / kind / f"snr-{snr!r}"


def run_experiment(cfg, out_dir, threads=1, with_bounds=True, write_cases=True):
    """Run every configured case; returns a :class:`RunResult` and writes the files."""
    start = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    tb = build_testbed(cfg)
    obs = cfg.observation
    setups = {kind: setup_kind(tb, kind) for kind in obs.kinds}
    extras = {}
    if with_bounds:
        extras = {kind: (prepare_joint(tb, ks), prepare_enhanced(tb, ks)) for kind, ks in setups.items()}
    jobs = [(kind, snr) for kind in obs.kinds for snr in obs.snr_scales]

    def one(job):
        kind, snr = job
        ks = setups[kind]
        case = run_case(tb, ks, snr)
        diag = case_diagnostics(tb, ks, case)
        if write_cases:
            _case_files(tb, ks, case, _snr_dir(out, kind, snr), h)
        bound = None
        if with_bounds:
            jp, enh = extras[kind]
            reports, marginal, c_enh = certify_case(tb, ks, case, jp, enh, cfg.bounds)
            bound = {"kind": kind, "snr": snr, "c_enh": c_enh,
                     "reports": [r.to_dict() for r in reports], "marginal": marginal}
        return diag, bound

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, jobs))
    diagnostics = [r[0] for r in results]
    bound_cases = [r[1] for r in results if r[1] is not None]

    for kind, ks in setups.items():
        signal = ks.operator.apply(tb.truth_state)
        rows = small_noise_study(ks.forward, ks.observed_error, tb.prior, tb.truth, signal, ks.index_set,
                                 obs.small_noise_scales)
        if write_cases:
            io.write_csv(out / kind / "small_noise.csv", SMALL_NOISE_HEADER,
                         [[r["scale"], r["sigma"], r["relative_error"]] for r in rows], h)
        for d in diagnostics:
            if d["kind"] == kind:
                d["small_noise"] = rows

    result = RunResult(out, diagnostics, bound_cases, time.perf_counter() - start)
    if with_bounds:
        io.write_json(out / "bound_report.json", {"cases": bound_cases, "all_hold": result.all_hold}, h)
    # no wall-clock fields: identical configs must give identical files
    write_meta(out, cfg, {"diagnostics": diagnostics, "testbed": testbed_summary(tb)})
    return result


def testbed_summary(tb):
    return {
        "n_space": tb.mesh.n_space,
        "n_time": tb.mesh.n_time,
        "n_obs": int(tb.layout.n_obs),
        "global_peclet": tb.system.coeffs.global_peclet(),
        "local_peclet": tb.system.local_peclet(),
        "mesh_diameter": tb.mesh.diameter(),
        "matern_asymmetry": tb.matern.asymmetry,
        "matern_raw_asymmetry": tb.matern.raw_asymmetry,
    }


def write_meta(out, cfg, extra):
    from . import __version__

    payload = {
        "config": cfg.to_dict(),
        "seeds": {"ic": cfg.prior.ic_seed, "noise": cfg.observation.noise_seed, "bounds": cfg.bounds.seed,
                  "joint": cfg.joint.seed},
        "git_hash": git_hash(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        **extra,
    }
    return io.write_json(Path(out) / "run_meta.json", payload, cfg.hash())
