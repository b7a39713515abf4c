"""File formats: clinic datasets, run configuration, posterior samples,
diagnostics sidecars, and plot-ready long-format series.

All formats are plain text so runs can be diffed and archived. Every parse
error names the file and line; nothing is silently defaulted.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .likelihood import ClinicObservation, Dataset, QuadratureConfig, SigmaPrior
from .melding import DEFAULT_CONSTRAINTS, MeldingConfig, PosteriorSample
from .model import DemographyConfig, SimGrid, SurvivalConfig
from .predictive import population_quantiles
from .priors import InputPriorConfig, OutputConstraint

__all__ = [
    "RunConfig",
    "default_config",
    "emit_plot_data",
    "parse_config",
    "parse_dataset",
    "read_posterior",
    "write_dataset",
    "write_diagnostics",
    "write_posterior",
]

_COUNT_HEADER = ["clinic", "year", "tested", "positive"]
_PERCENT_HEADER = ["clinic", "year", "tested", "prevalence_percent"]

# cross-component defaults for everything tunable; mu/entry_rate/kappa are
# stand-in demographic rates, not published values
_INT_KEYS = {
    "start_year",
    "end_year",
    "t0_min",
    "t0_max",
    "quad_max_subdivisions",
    "n_prior",
    "n_resample",
    "seed",
}
_FLOAT_KEYS = {
    "mu",
    "entry_rate",
    "kappa",
    "lambda0",
    "weibull_shape",
    "weibull_scale",
    "dt",
    "r_max",
    "chi_prior",
    "beta1",
    "beta2",
    "quad_rel_tol",
}


@dataclass(frozen=True)
class RunConfig:
    """Merged view of every tunable knob, as read from a config file."""

    mu: float = 0.02
    entry_rate: float = 0.02
    kappa: float = 0.5
    lambda0: float = 0.001
    weibull_shape: float = 2.4
    weibull_scale: float = 10.5
    start_year: int = 1970
    end_year: int = 2020
    dt: float = 0.1
    r_max: float = 15.0
    t0_min: int = 1970
    t0_max: int = 1990
    chi_prior: float = 0.1
    beta1: float = 0.58
    beta2: float = 93.0
    quad_rel_tol: float = 1e-6
    quad_max_subdivisions: int = 200
    n_prior: int = 200_000
    n_resample: int = 3_000
    seed: int = 0
    constraints: tuple = DEFAULT_CONSTRAINTS

    def demography(self):
        return DemographyConfig(
            mu=self.mu, entry_rate=self.entry_rate, kappa=self.kappa
        )

    def survival(self):
        return SurvivalConfig(
            weibull_shape=self.weibull_shape,
            weibull_scale=self.weibull_scale,
            lambda0=self.lambda0,
        )

    def grid(self):
        return SimGrid(
            start_year=self.start_year, end_year=self.end_year, dt=self.dt
        )

    def prior(self):
        return InputPriorConfig(
            r_max=self.r_max,
            t0_min=self.t0_min,
            t0_max=self.t0_max,
            chi_prior=self.chi_prior,
        )

    def sigma_prior(self):
        return SigmaPrior(beta1=self.beta1, beta2=self.beta2)

    def quadrature(self):
        return QuadratureConfig(
            rel_tol=self.quad_rel_tol,
            max_subdivisions=self.quad_max_subdivisions,
        )

    def melding(self, n_prior=None, n_resample=None, seed=None, n_threads=1):
        """MeldingConfig with optional command-line overrides."""
        return MeldingConfig(
            n_prior=self.n_prior if n_prior is None else int(n_prior),
            n_resample=self.n_resample if n_resample is None else int(n_resample),
            seed=self.seed if seed is None else int(seed),
            n_threads=int(n_threads),
            prior=self.prior(),
            demography=self.demography(),
            survival=self.survival(),
            grid=self.grid(),
            constraints=self.constraints,
            sigma_prior=self.sigma_prior(),
            quadrature=self.quadrature(),
        )


def default_config():
    return RunConfig()


def _config_error(path, lineno, msg):
    return ConfigError(f"{path}:{lineno}: {msg}")


def _parse_constraint(path, lineno, text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise _config_error(
            path, lineno, f"constraint needs YEAR,LOWER,UPPER, got {text!r}"
        )
    try:
        year = int(parts[0])
        lower = float(parts[1])
        upper = float(parts[2])
    except ValueError:
        raise _config_error(
            path, lineno, f"unparsable constraint {text!r}"
        ) from None
    try:
        return OutputConstraint(year=year, lower=lower, upper=upper)
    except ValueError as exc:
        raise _config_error(path, lineno, str(exc)) from None


def parse_config(path):
    """Read a `key = value` config file; '#' starts a comment.

    Absent keys keep their defaults. `constraint` lines are cumulative and
    replace the default constraint; `constraint = none` resets the list.
    Duplicate scalar keys keep the last value.
    """
    values = {}
    key_lines = {}
    constraints = None
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise _config_error(path, lineno, f"expected 'key = value', got {line!r}")
            key = key.strip()
            value = value.strip()
            if key == "constraint":
                if value.lower() == "none":
                    constraints = []
                else:
                    parsed = _parse_constraint(path, lineno, value)
                    constraints = (constraints or []) + [parsed]
                continue
            if key in _INT_KEYS:
                try:
                    values[key] = int(value)
                except ValueError:
                    raise _config_error(
                        path, lineno, f"{key} needs an integer, got {value!r}"
                    ) from None
            elif key in _FLOAT_KEYS:
                try:
                    values[key] = float(value)
                except ValueError:
                    raise _config_error(
                        path, lineno, f"{key} needs a number, got {value!r}"
                    ) from None
            else:
                raise _config_error(path, lineno, f"unknown key {key!r}")
            key_lines[key] = lineno

    if constraints is not None:
        values["constraints"] = tuple(constraints)
    cfg = RunConfig(**values)

    # surface invariant violations with the line of the offending key
    for build, keys in (
        (cfg.demography, ("mu", "entry_rate", "kappa")),
        (cfg.survival, ("weibull_shape", "weibull_scale", "lambda0")),
        (cfg.grid, ("start_year", "end_year", "dt")),
        (cfg.prior, ("r_max", "t0_min", "t0_max", "chi_prior")),
        (cfg.sigma_prior, ("beta1", "beta2")),
        (cfg.quadrature, ("quad_rel_tol", "quad_max_subdivisions")),
        (cfg.melding, ("n_prior", "n_resample", "seed", "t0_min", "t0_max",
                       "start_year", "end_year", "dt")),
    ):
        try:
            build()
        except ValueError as exc:
            lineno = max((key_lines.get(k, 0) for k in keys), default=0)
            raise _config_error(path, lineno, str(exc)) from None
    return cfg


def _dataset_error(path, lineno, msg):
    return DataError(f"{path}:{lineno}: {msg}")


def parse_dataset(path):
    """Read clinic observations from CSV.

    Header is either clinic,year,tested,positive or
    clinic,year,tested,prevalence_percent; in the latter case positive
    counts are recovered by half-up rounding of tested * percent / 100.
    Clinic order follows first appearance.
    """
    observations = []
    seen = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise _dataset_error(path, 1, "empty file") from None
        header = [h.strip().lower() for h in header]
        if header == _COUNT_HEADER:
            percent = False
        elif header == _PERCENT_HEADER:
            percent = True
        elif "positive" in header and "prevalence_percent" in header:
            raise _dataset_error(
                path, 1, "header mixes positive and prevalence_percent columns"
            )
        else:
            raise _dataset_error(
                path,
                1,
                f"header must be {','.join(_COUNT_HEADER)} or "
                f"{','.join(_PERCENT_HEADER)}, got {','.join(header)!r}",
            )
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise _dataset_error(
                    path, lineno, f"expected 4 columns, got {len(row)}"
                )
            clinic = row[0].strip()
            if not clinic:
                raise _dataset_error(path, lineno, "empty clinic id")
            try:
                year = int(row[1])
            except ValueError:
                raise _dataset_error(
                    path, lineno, f"year must be an integer, got {row[1]!r}"
                ) from None
            try:
                tested = int(row[2])
            except ValueError:
                raise _dataset_error(
                    path, lineno, f"tested must be an integer, got {row[2]!r}"
                ) from None
            if percent:
                try:
                    pct = float(row[3])
                except ValueError:
                    raise _dataset_error(
                        path,
                        lineno,
                        f"prevalence_percent must be a number, got {row[3]!r}",
                    ) from None
                if not 0.0 <= pct <= 100.0:
                    raise _dataset_error(
                        path, lineno, f"prevalence_percent outside [0, 100]: {pct}"
                    )
                positive = int(math.floor(tested * pct / 100.0 + 0.5))
            else:
                try:
                    positive = int(row[3])
                except ValueError:
                    raise _dataset_error(
                        path, lineno, f"positive must be an integer, got {row[3]!r}"
                    ) from None
            key = (clinic, year)
            if key in seen:
                raise _dataset_error(
                    path,
                    lineno,
                    f"duplicate observation for clinic {clinic!r} year {year} "
                    f"(first at line {seen[key]})",
                )
            seen[key] = lineno
            try:
                observations.append(
                    ClinicObservation(
                        clinic_id=clinic,
                        year=year,
                        n_tested=tested,
                        n_positive=positive,
                    )
                )
            except ValueError as exc:
                raise _dataset_error(path, lineno, str(exc)) from None
    return Dataset(observations)


def write_dataset(dataset, path):
    """Write counts-form CSV; parse_dataset recovers the dataset exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_COUNT_HEADER)
        for obs in dataset.observations:
            writer.writerow(
                [obs.clinic_id, obs.year, obs.n_tested, obs.n_positive]
            )


def write_posterior(posterior, path):
    """Posterior CSV: index,multiplicity,r,f0,t0,phi,rho_YYYY,...

    Parameters carry full precision; prevalences carry 6 significant
    digits. One row per retained unique draw.
    """
    years = [int(y) for y in np.asarray(posterior.years)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["index", "multiplicity", "r", "f0", "t0", "phi"]
            + [f"rho_{y}" for y in years]
        )
        for i in range(len(posterior)):
            row = [
                int(posterior.source_index[i]),
                int(posterior.multiplicity[i]),
                format(float(posterior.r[i]), ".17g"),
                format(float(posterior.f0[i]), ".17g"),
                int(posterior.t0[i]),
                format(float(posterior.phi[i]), ".17g"),
            ]
            row.extend(format(float(v), ".6g") for v in posterior.rho[i])
            writer.writerow(row)


def read_posterior(path):
    """Read a posterior CSV back; diagnostics live in the sidecar and are
    not restored."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise _dataset_error(path, 1, "empty posterior file") from None
        expected = ["index", "multiplicity", "r", "f0", "t0", "phi"]
        if header[: len(expected)] != expected or len(header) <= len(expected):
            raise _dataset_error(
                path, 1, "header must start index,multiplicity,r,f0,t0,phi,rho_YYYY"
            )
        years = []
        for name in header[len(expected) :]:
            if not name.startswith("rho_"):
                raise _dataset_error(path, 1, f"unexpected column {name!r}")
            try:
                years.append(int(name[4:]))
            except ValueError:
                raise _dataset_error(path, 1, f"unexpected column {name!r}") from None
        if any(b - a != 1 for a, b in zip(years, years[1:])):
            raise _dataset_error(path, 1, "rho_ columns must be consecutive years")
        rows = []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise _dataset_error(
                    path, lineno, f"expected {len(header)} columns, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise _dataset_error(path, lineno, "unparsable number") from None
    if not rows:
        raise _dataset_error(path, 1, "posterior file has no draws")
    table = np.asarray(rows)
    return PosteriorSample(
        years=np.asarray(years, dtype=np.int64),
        source_index=table[:, 0].astype(np.int64),
        multiplicity=table[:, 1].astype(np.int64),
        r=table[:, 2].copy(),
        f0=table[:, 3].copy(),
        t0=table[:, 4].copy(),
        phi=table[:, 5].copy(),
        rho=table[:, 6:].copy(),
        diagnostics=None,
    )


def write_diagnostics(diagnostics, path):
    """Sidecar `key = value` text file with the SIR degeneracy summary."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ess = {diagnostics.ess:.17g}\n")
        fh.write(f"unique_count = {diagnostics.unique_count}\n")
        fh.write(f"max_multiplicity = {diagnostics.max_multiplicity}\n")
        fh.write(
            f"constraint_pass_rate = {diagnostics.constraint_pass_rate:.17g}\n"
        )
        fh.write(f"n_quadrature_failures = {diagnostics.n_quadrature_failures}\n")


def emit_plot_data(posterior, dataset, path, max_trajectories=200, bins=30):
    """Long-format CSV (series,year,value) with everything a plot needs.

    Series: obs/<clinic> observed proportions; band/q2.5, band/q50,
    band/q97.5 population quantiles per year; traj/<index> for up to
    max_trajectories unique trajectories (row order); hist/<param> with the
    bin center in the year column and the multiplicity-weighted count as
    value, so counts sum to the resample size.
    """
    if max_trajectories < 0:
        raise ValueError("max_trajectories must be >= 0")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    years = [int(y) for y in np.asarray(posterior.years)]
    qs = population_quantiles(posterior, (0.025, 0.5, 0.975))
    mult = np.asarray(posterior.multiplicity, dtype=np.int64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["series", "year", "value"])
        if dataset is not None:
            for obs in dataset.observations:
                writer.writerow(
                    [
                        f"obs/{obs.clinic_id}",
                        obs.year,
                        format(obs.n_positive / obs.n_tested, ".10g"),
                    ]
                )
        for label, col in (("q2.5", 0), ("q50", 1), ("q97.5", 2)):
            for j, year in enumerate(years):
                writer.writerow(
                    [f"band/{label}", year, format(qs[j, col], ".10g")]
                )
        for i in range(min(len(posterior), max_trajectories)):
            name = f"traj/{int(posterior.source_index[i])}"
            for j, year in enumerate(years):
                writer.writerow(
                    [name, year, format(float(posterior.rho[i, j]), ".10g")]
                )
        for name, vals in (
            ("r", posterior.r),
            ("f0", posterior.f0),
            ("t0", posterior.t0),
            ("phi", posterior.phi),
        ):
            counts, edges = np.histogram(
                np.asarray(vals, dtype=float), bins=bins, weights=mult
            )
            centers = 0.5 * (edges[:-1] + edges[1:])
            for c, n in zip(centers, counts):
                writer.writerow(
                    [f"hist/{name}", format(float(c), ".10g"), int(n)]
                )
