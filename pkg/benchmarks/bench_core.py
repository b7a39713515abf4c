"""Benchmark the compiled kernels against the pure-Python fallback.

Times the two hot paths (trajectory simulation and integrated likelihood)
on identical inputs and reports per-draw costs plus the worst parity gap.

Usage: python benchmarks/bench_core.py [--draws 2000] [--threads 4]
"""

import argparse
import time

import numpy as np
from scipy.special import ndtr, ndtri

from epimeld._core import get_backend
from epimeld.likelihood import ClinicObservation, Dataset, prepare_dataset
from epimeld.melding import MeldingConfig
from epimeld.model import DemographyConfig, EppParams, SurvivalConfig, death_kernel, simulate
from epimeld.priors import sample_inputs


def _synthetic_dataset(grid, seed=5):
    rng = np.random.default_rng(seed)
    truth = EppParams(r=1.8, f0=0.25, t0=1978.0, phi=-3.0)
    traj = simulate(truth, DemographyConfig(), SurvivalConfig(), grid)
    obs = []
    for c in range(5):
        b = rng.normal(0.0, 0.15)
        for year in range(1988, 2000):
            gamma = ndtr(ndtri(traj.at(year)) + b)
            obs.append(
                ClinicObservation(f"c{c}", year, 300, int(rng.binomial(300, gamma)))
            )
    return Dataset(obs)


def _timeit(fn, repeats=3):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--draws", type=int, default=2000)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()

    cfg = MeldingConfig(n_prior=args.draws, n_resample=min(500, args.draws), seed=3)
    grid = cfg.grid
    params = sample_inputs(cfg.prior, args.draws, cfg.seed)
    masses = death_kernel(grid, cfg.survival)
    dataset = _synthetic_dataset(grid, seed=5)
    prepared = prepare_dataset(dataset, grid.years)

    backends = {}
    for name in ("python", "compiled"):
        try:
            backends[name] = get_backend(name)
        except ImportError:
            print(f"{name}: not available, skipping")

    sim_args = (
        params.r, params.f0, params.t0, params.phi,
        cfg.demography.mu, cfg.demography.entry_rate, cfg.demography.kappa,
        cfg.survival.lambda0, masses, float(grid.start_year), grid.dt,
        grid.n_steps, grid.year_steps(),
    )
    rho = {}
    print(f"simulate_batch, {args.draws} draws, grid {grid.start_year}-{grid.end_year} at dt={grid.dt}")
    for name, mod in backends.items():
        for threads in (1, args.threads):
            secs, out = _timeit(
                lambda m=mod, t=threads: m.simulate_batch(*sim_args, n_threads=t)
            )
            rho[name] = out
            print(
                f"  {name:8s} threads={threads}: {secs:8.3f} s "
                f"({1e6 * secs / args.draws:9.2f} us/draw)"
            )

    lik = {}
    lik_args = (
        prepared.w, prepared.v, prepared.year_idx, prepared.clinic_offsets,
        prepared.gauss_const, cfg.sigma_prior.beta1, cfg.sigma_prior.beta2,
        cfg.quadrature.rel_tol, cfg.quadrature.max_subdivisions,
    )
    print(f"integrated_loglik_batch, {args.draws} draws, {len(prepared.w)} observations")
    for name, mod in backends.items():
        for threads in (1, args.threads):
            secs, out = _timeit(
                lambda m=mod, t=threads: m.integrated_loglik_batch(
                    rho[name], *lik_args, n_threads=t
                )
            )
            lik[name] = out[0]
            print(
                f"  {name:8s} threads={threads}: {secs:8.3f} s "
                f"({1e6 * secs / args.draws:9.2f} us/draw)"
            )

    if len(backends) == 2:
        gap_rho = float(np.max(np.abs(rho["python"] - rho["compiled"])))
        both = np.isfinite(lik["python"]) & np.isfinite(lik["compiled"])
        gap_lik = float(np.max(np.abs(lik["python"][both] - lik["compiled"][both])))
        print(f"parity: max |drho| = {gap_rho:.3g}, max |dloglik| = {gap_lik:.3g}")


if __name__ == "__main__":
    main()
