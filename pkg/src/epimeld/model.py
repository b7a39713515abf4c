"""Deterministic compartmental epidemic model.

The population is split into a not-at-risk group X, an at-risk group Z and an
infected group Y, normalised so N = X + Z + Y starts at 1. Four parameters
steer the epidemic: the infection rate ``r``, the initial at-risk fraction
``f0``, the start year ``t0`` and the behavioural response ``phi``. New
adults enter at a rate proportional to the population 15 years earlier and
split between X and Z according to ``at_risk_fraction``; infected people die
according to a Weibull survival distribution, implemented as a discrete
convolution of past incidence. The epidemic is seeded by moving a pulse of
``lambda0 * Z`` into Y during the step containing t0.

Stepping uses the explicit midpoint rule at ``dt`` (default 0.1 year); see
``SimGrid`` for the grid conventions. Annual prevalence is the trajectory
sampled at mid-year.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from . import _core

__all__ = [
    "DEATH_HORIZON_YEARS",
    "DemographyConfig",
    "EpidemicState",
    "EppParams",
    "PrevalenceTrajectory",
    "SimGrid",
    "SurvivalConfig",
    "annualize",
    "at_risk_fraction",
    "chi",
    "death_kernel",
    "entry_count",
    "simulate",
    "simulate_states",
]

# Weibull tail mass beyond 60 years is below 1e-9 for the default shape and
# scale, so the death convolution is truncated there.
DEATH_HORIZON_YEARS = 60.0


@dataclass(frozen=True)
class EppParams:
    """Input parameters theta = (r, f0, t0, phi)."""

    r: float
    f0: float
    t0: float
    phi: float

    def __post_init__(self):
        if not (self.r >= 0.0 and math.isfinite(self.r)):
            raise ValueError(f"r must be finite and >= 0, got {self.r}")
        if not 0.0 <= self.f0 <= 1.0:
            raise ValueError(f"f0 must be in [0, 1], got {self.f0}")
        if not float(self.t0).is_integer():
            raise ValueError(f"t0 must be an integer year, got {self.t0}")
        if not math.isfinite(self.phi):
            raise ValueError(f"phi must be finite, got {self.phi}")


@dataclass(frozen=True)
class DemographyConfig:
    """Non-AIDS demography. Defaults are not from any published source and
    are meant to be overridden from the config file: mu is the adult death
    rate, entry_rate the rate of new 15-year-olds per head of population 15
    years earlier, and kappa discounts the infected group's contribution to
    entries (fertility reduction plus child mortality)."""

    mu: float = 0.02
    entry_rate: float = 0.02
    kappa: float = 0.5

    def __post_init__(self):
        if not self.mu > 0.0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not self.entry_rate > 0.0:
            raise ValueError(f"entry_rate must be > 0, got {self.entry_rate}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must be in [0, 1], got {self.kappa}")


@dataclass(frozen=True)
class SurvivalConfig:
    """Weibull survival after infection plus the seed pulse size.

    lambda0 = 0 is allowed (it disables the epidemic entirely), which is
    useful for demographic-only runs and tests.
    """

    weibull_shape: float = 2.4
    weibull_scale: float = 10.5
    lambda0: float = 0.001

    def __post_init__(self):
        if not self.weibull_shape > 0.0:
            raise ValueError(f"weibull_shape must be > 0, got {self.weibull_shape}")
        if not self.weibull_scale > 0.0:
            raise ValueError(f"weibull_scale must be > 0, got {self.weibull_scale}")
        if not 0.0 <= self.lambda0 < 1.0:
            raise ValueError(f"lambda0 must be in [0, 1), got {self.lambda0}")


@dataclass(frozen=True)
class SimGrid:
    """Simulation grid: integer start/end years and a step that divides the
    year. The stepper integrates half a year past end_year so that every
    reported year, including the last, is sampled at mid-year."""

    start_year: int = 1970
    end_year: int = 2020
    dt: float = 0.1

    def __post_init__(self):
        if self.start_year >= self.end_year:
            raise ValueError(
                f"start_year must be < end_year, got {self.start_year}..{self.end_year}"
            )
        if not self.dt > 0.0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        steps_per_year = 1.0 / self.dt
        if abs(steps_per_year - round(steps_per_year)) > 1e-9:
            raise ValueError(f"dt must divide the year evenly, got {self.dt}")

    @property
    def years(self):
        """All integer years on the grid, start..end inclusive."""
        return np.arange(self.start_year, self.end_year + 1)

    @property
    def n_steps(self):
        whole = int(round((self.end_year - self.start_year) / self.dt))
        return whole + math.ceil(0.5 / self.dt - 1e-9)

    def step_times(self):
        return self.start_year + self.dt * np.arange(self.n_steps + 1)

    def year_index(self, year):
        """Column index of an integer year in the annual arrays."""
        year = int(year)
        if not self.start_year <= year <= self.end_year:
            raise ValueError(
                f"year {year} outside grid {self.start_year}..{self.end_year}"
            )
        return year - self.start_year

    def year_steps(self):
        """Step index nearest mid-year for every grid year."""
        idx = np.rint(
            (self.years + 0.5 - self.start_year) / self.dt
        ).astype(np.intp)
        return np.minimum(idx, self.n_steps)


@dataclass(frozen=True)
class EpidemicState:
    """Full step-level record of one simulation.

    x, z, y hold the compartment sizes at each of the n_steps + 1 grid times
    (they double as the population history that entry_count reads), and
    incidence holds the per-step mass of new infections driving the death
    convolution.
    """

    grid: SimGrid
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    incidence: np.ndarray


@dataclass(frozen=True)
class PrevalenceTrajectory:
    """Annual population prevalence rho_t on the grid years."""

    years: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int)
        rho = np.asarray(self.rho, dtype=float)
        if years.shape != rho.shape:
            raise ValueError("years and rho must have equal length")
        if rho.size and (np.min(rho) < 0.0 or np.max(rho) > 1.0):
            raise ValueError("prevalence values must lie in [0, 1]")
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "rho", rho)

    def at(self, year):
        """Prevalence in a single integer year."""
        idx = np.searchsorted(self.years, int(year))
        if idx >= self.years.size or self.years[idx] != int(year):
            raise ValueError(f"year {year} not on trajectory grid")
        return float(self.rho[idx])


def chi(x_frac, f0):
    """Deviation of the not-at-risk fraction from its initial value 1 - f0."""
    return x_frac - (1.0 - f0)


def at_risk_fraction(x_frac, f0, phi):
    """Fraction of new entrants joining the at-risk group.

    Evaluates exp(phi*chi) / (exp(phi*chi) - 1 + 1/f0) in the overflow-safe
    logistic form expit(phi*chi + logit(f0)). The boundaries f0 = 0 and
    f0 = 1 return 0 and 1, their continuous limits.
    """
    x_frac = np.asarray(x_frac, dtype=float)
    f0_arr = np.asarray(f0, dtype=float)
    with np.errstate(divide="ignore"):
        lf0 = logit(f0_arr)
    out = expit(np.asarray(phi, dtype=float) * chi(x_frac, f0_arr) + lf0)
    if out.ndim == 0:
        return float(out)
    return out


def death_kernel(grid, cfg):
    """Per-step death masses g_k = S((k-1) dt) - S(k dt) for k = 1..K.

    S is the Weibull survival function; K covers DEATH_HORIZON_YEARS. g_k is
    the probability an infected person dies during the k-th step after
    infection; the masses sum to 1 up to the truncated tail.
    """
    n_k = int(round(DEATH_HORIZON_YEARS / grid.dt))
    k = np.arange(n_k + 1, dtype=float)
    survival = np.exp(-((k * grid.dt / cfg.weibull_scale) ** cfg.weibull_shape))
    return survival[:-1] - survival[1:]


def entry_count(state, t, demog):
    """New adults entering during the step starting at time t.

    E = entry_rate * [X(t-15) + Z(t-15) + kappa * Y(t-15)] * dt; times
    earlier than the grid use the stationary initial population.
    """
    grid = state.grid
    step = int(round((t - grid.start_year) / grid.dt))
    if not 0 <= step <= grid.n_steps:
        raise ValueError(f"time {t} outside simulation grid")
    lookback = int(round(15.0 / grid.dt))
    j = step - lookback if step >= lookback else 0
    n15 = state.x[j] + state.z[j] + demog.kappa * state.y[j]
    return demog.entry_rate * n15 * grid.dt


def simulate_states(params, demog, survival, grid):
    """Run the stepper and return the full EpidemicState."""
    if not grid.start_year <= params.t0 <= grid.end_year:
        raise ValueError(
            f"t0 {params.t0} outside grid {grid.start_year}..{grid.end_year}"
        )
    g = death_kernel(grid, survival)
    x, z, y, inc = _core.simulate_steps(
        params.r,
        params.f0,
        float(params.t0),
        params.phi,
        demog.mu,
        demog.entry_rate,
        demog.kappa,
        survival.lambda0,
        g,
        float(grid.start_year),
        grid.dt,
        grid.n_steps,
    )
    return EpidemicState(grid=grid, x=x, z=z, y=y, incidence=inc)


def annualize(values, grid):
    """Pick the step nearest mid-year for each grid year.

    values is any per-step series of length n_steps + 1; the result is a
    PrevalenceTrajectory over the grid years (so values are expected to be
    prevalences in [0, 1]).
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.n_steps + 1:
        raise ValueError("step series does not cover the grid")
    return PrevalenceTrajectory(years=grid.years, rho=values[grid.year_steps()])


def simulate(params, demog, survival, grid):
    """Annual prevalence trajectory for one parameter draw."""
    state = simulate_states(params, demog, survival, grid)
    total = state.x + state.z + state.y
    with np.errstate(invalid="ignore", divide="ignore"):
        rho_steps = np.where(total > 0.0, state.y / total, 0.0)
    return annualize(rho_steps, grid)
