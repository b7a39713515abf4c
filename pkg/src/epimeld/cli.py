"""Command-line interface.

Subcommands cover the whole pipeline: simulate a trajectory, fit the
posterior, project population quantiles, draw clinic-level predictions,
backtest against held-out years, and emit plot-ready series. Every run is
reproducible from its flags; there are no environment-variable overrides.

Exit codes: 0 success, 2 usage (argparse), 3 data ingestion, 4
configuration, 5 inference.
"""

import argparse
import csv
import sys

import numpy as np

from . import dataio
from .errors import ConfigError, DataError, InferenceError
from .melding import run_melding
from .model import EppParams, simulate
from .predictive import PredictiveRequest, backtest, predict_clinic, population_quantiles

EXIT_DATA = 3
EXIT_CONFIG = 4
EXIT_INFERENCE = 5


def _load_config(path):
    return dataio.parse_config(path) if path else dataio.default_config()


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_simulate(args):
    cfg = _load_config(args.config)
    params = EppParams(r=args.r, f0=args.f0, t0=float(args.t0), phi=args.phi)
    traj = simulate(params, cfg.demography(), cfg.survival(), cfg.grid())
    _write_rows(
        args.out,
        ["year", "prevalence"],
        (
            [int(y), format(float(p), ".10g")]
            for y, p in zip(traj.years, traj.rho)
        ),
    )
    return 0


def _cmd_fit(args):
    cfg = _load_config(args.config)
    dataset = dataio.parse_dataset(args.data)
    try:
        meld_cfg = cfg.melding(
            n_prior=args.n,
            n_resample=args.resample,
            seed=args.seed,
            n_threads=args.threads,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    posterior = run_melding(meld_cfg, dataset)
    dataio.write_posterior(posterior, args.out)
    diag_path = args.diagnostics or args.out + ".diag"
    dataio.write_diagnostics(posterior.diagnostics, diag_path)
    d = posterior.diagnostics
    print(
        f"retained {len(posterior)} unique draws (resample size "
        f"{posterior.n_resampled}); ess = {d.ess:.1f}; "
        f"constraint pass rate = {d.constraint_pass_rate:.3f}"
    )
    print(f"wrote {args.out} and {diag_path}")
    return 0


def _parse_probs(text):
    try:
        labels = [p.strip() for p in text.split(",") if p.strip()]
        probs = [float(p) for p in labels]
    except ValueError:
        raise ConfigError(f"--quantiles must be comma-separated numbers, got {text!r}") from None
    if not probs:
        raise ConfigError("--quantiles must name at least one probability")
    if any(not 0.0 < p < 1.0 for p in probs):
        raise ConfigError("--quantiles probabilities must lie strictly inside (0, 1)")
    return labels, probs


def _parse_year_range(text, years):
    try:
        a_txt, sep, b_txt = text.partition(":")
        if not sep:
            raise ValueError
        a, b = int(a_txt), int(b_txt)
    except ValueError:
        raise ConfigError(f"--years must look like 1985:2010, got {text!r}") from None
    if a > b:
        raise ConfigError(f"--years range is empty: {text}")
    if a < years[0] or b > years[-1]:
        raise ConfigError(
            f"--years {text} outside the posterior grid {years[0]}:{years[-1]}"
        )
    return a, b


def _cmd_project(args):
    posterior = dataio.read_posterior(args.posterior)
    years = [int(y) for y in np.asarray(posterior.years)]
    labels, probs = _parse_probs(args.quantiles)
    lo, hi = (years[0], years[-1]) if args.years is None else _parse_year_range(
        args.years, years
    )
    qs = population_quantiles(posterior, probs)
    rows = []
    for j, year in enumerate(years):
        if lo <= year <= hi:
            rows.append(
                [year] + [format(float(v), ".10g") for v in qs[j]]
            )
    _write_rows(args.out, ["year"] + [f"q_{p}" for p in labels], rows)
    return 0


def _cmd_predict_clinic(args):
    cfg = _load_config(args.config)
    posterior = dataio.read_posterior(args.posterior)
    dataset = dataio.parse_dataset(args.data)
    history = dataset.clinic_observations(args.clinic)
    if args.n_tested is not None:
        n_tested = args.n_tested
    else:
        n_tested = max(history, key=lambda o: o.year).n_tested
    try:
        request = PredictiveRequest(
            clinic_id=args.clinic, year=args.year, n_tested=n_tested
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    draws = predict_clinic(
        posterior, dataset, request, prior=cfg.sigma_prior(), seed=args.seed
    )
    _write_rows(
        args.out,
        ["draw"],
        ([format(float(v), ".10g")] for v in draws.draws),
    )
    q025, q500, q975 = draws.quantiles((0.025, 0.5, 0.975))
    print(
        f"{args.clinic} in {args.year} (n = {n_tested}): median {q500:.4f}, "
        f"95% interval [{q025:.4f}, {q975:.4f}] from {draws.draws.size} draws"
    )
    return 0


def _cmd_backtest(args):
    cfg = _load_config(args.config)
    dataset = dataio.parse_dataset(args.data)
    try:
        meld_cfg = cfg.melding(
            n_prior=args.n,
            n_resample=args.resample,
            seed=args.seed,
            n_threads=args.threads,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = backtest(dataset, args.truncate, meld_cfg, seed=meld_cfg.seed)
    _write_rows(
        args.out,
        ["clinic", "year", "tested", "observed", "q2.5", "q50", "q97.5", "inside"],
        (
            [
                p.clinic_id,
                p.year,
                p.n_tested,
                format(p.observed, ".10g"),
                format(p.q025, ".10g"),
                format(p.q500, ".10g"),
                format(p.q975, ".10g"),
                int(p.inside),
            ]
            for p in report.points
        ),
    )
    n_in = sum(p.inside for p in report.points)
    print(
        f"truncated at {report.truncate_year}: {n_in}/{len(report.points)} "
        f"held-out observations inside 95% intervals "
        f"(coverage = {report.coverage:.3f})"
    )
    return 0


def _cmd_plot_data(args):
    posterior = dataio.read_posterior(args.posterior)
    dataset = dataio.parse_dataset(args.data) if args.data else None
    dataio.emit_plot_data(
        posterior,
        dataset,
        args.out,
        max_trajectories=args.max_trajectories,
        bins=args.bins,
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="epimeld",
        description="Probabilistic HIV-prevalence projection from "
        "antenatal-clinic data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the epidemic model once")
    p.add_argument("--r", type=float, required=True, help="infection rate")
    p.add_argument("--f0", type=float, required=True, help="initial at-risk fraction")
    p.add_argument("--t0", type=int, required=True, help="epidemic start year")
    p.add_argument("--phi", type=float, required=True, help="recruitment sensitivity")
    p.add_argument("--config", help="config file")
    p.add_argument("--out", required=True, help="output trajectory CSV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="calibrate the model to clinic data")
    p.add_argument("--data", required=True, help="clinic dataset CSV")
    p.add_argument("--config", help="config file")
    p.add_argument("--n", type=int, help="prior sample size")
    p.add_argument("--resample", type=int, help="posterior resample size")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--out", required=True, help="posterior CSV")
    p.add_argument("--diagnostics", help="diagnostics sidecar (default OUT.diag)")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("project", help="population prevalence quantiles")
    p.add_argument("--posterior", required=True, help="posterior CSV from fit")
    p.add_argument("--years", help="inclusive range like 1985:2010")
    p.add_argument(
        "--quantiles",
        default="0.025,0.5,0.975",
        help="comma-separated probabilities",
    )
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser(
        "predict-clinic", help="posterior predictive draws for one clinic-year"
    )
    p.add_argument("--posterior", required=True, help="posterior CSV from fit")
    p.add_argument("--data", required=True, help="clinic dataset CSV")
    p.add_argument("--clinic", required=True, help="clinic id")
    p.add_argument("--year", type=int, required=True, help="prediction year")
    p.add_argument(
        "--n-tested",
        type=int,
        help="sample size (default: clinic's most recent observed size)",
    )
    p.add_argument("--config", help="config file")
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.add_argument("--out", required=True, help="output draws CSV")
    p.set_defaults(func=_cmd_predict_clinic)

    p = sub.add_parser("backtest", help="fit on early years, score later ones")
    p.add_argument("--data", required=True, help="clinic dataset CSV")
    p.add_argument("--truncate", type=int, required=True, help="last fitting year")
    p.add_argument("--config", help="config file")
    p.add_argument("--n", type=int, help="prior sample size")
    p.add_argument("--resample", type=int, help="posterior resample size")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--out", required=True, help="coverage CSV")
    p.set_defaults(func=_cmd_backtest)

    p = sub.add_parser("plot-data", help="long-format series for plotting")
    p.add_argument("--posterior", required=True, help="posterior CSV from fit")
    p.add_argument("--data", help="clinic dataset CSV for observed points")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--max-trajectories", type=int, default=200)
    p.add_argument("--bins", type=int, default=30)
    p.set_defaults(func=_cmd_plot_data)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InferenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
