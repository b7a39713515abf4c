"""Sampling-importance-resampling engine.

The posterior over input parameters and trajectories is built in four steps:
draw from the input prior, push every draw through the epidemic model,
weight each draw by the integrated likelihood times the output-constraint
indicator, and resample with replacement proportionally to the weights.
Weights live in log space with max subtraction; constraint violations get
log weight -inf, and draws whose likelihood quadrature failed are demoted to
-inf as well (counted in the diagnostics rather than aborting the run).

Everything is deterministic for a fixed config: RNG substreams are
counter-based, and the batch kernels produce identical results for any
thread count.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _core
from .errors import ConfigError, InferenceError
from .likelihood import (
    Dataset,
    QuadratureConfig,
    SigmaPrior,
    _prior_log_norm,
    prepare_dataset,
)
from .model import (
    DemographyConfig,
    EppParams,
    PrevalenceTrajectory,
    SimGrid,
    SurvivalConfig,
    death_kernel,
)
from .priors import InputPriorConfig, OutputConstraint, sample_inputs

__all__ = [
    "Diagnostics",
    "MeldingConfig",
    "PosteriorSample",
    "WeightedDraw",
    "compute_log_weights",
    "diagnostics_report",
    "resample",
    "run_melding",
    "weigh_draw",
]

# RNG substream key for the resampling stage (prior components use 0..3)
_STREAM_RESAMPLE = 10

DEFAULT_CONSTRAINTS = (OutputConstraint(year=1980, lower=0.0, upper=0.10),)


@dataclass(frozen=True)
class MeldingConfig:
    n_prior: int = 200_000
    n_resample: int = 3_000
    seed: int = 0
    n_threads: int = 1
    prior: InputPriorConfig = field(default_factory=InputPriorConfig)
    demography: DemographyConfig = field(default_factory=DemographyConfig)
    survival: SurvivalConfig = field(default_factory=SurvivalConfig)
    grid: SimGrid = field(default_factory=SimGrid)
    constraints: tuple = DEFAULT_CONSTRAINTS
    sigma_prior: SigmaPrior = field(default_factory=SigmaPrior)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if not 1 <= self.n_resample <= self.n_prior:
            raise ValueError(
                f"need 1 <= n_resample <= n_prior, got "
                f"{self.n_resample} / {self.n_prior}"
            )
        if self.n_threads < 1:
            raise ValueError(f"n_threads must be >= 1, got {self.n_threads}")
        # every sampleable seed year must lie on the simulation grid
        if (
            self.prior.t0_min < self.grid.start_year
            or self.prior.t0_max > self.grid.end_year
        ):
            raise ValueError(
                f"seed-year prior {self.prior.t0_min}..{self.prior.t0_max} "
                f"extends beyond the simulation grid "
                f"{self.grid.start_year}..{self.grid.end_year}"
            )


@dataclass(frozen=True)
class WeightedDraw:
    """One prior draw with its trajectory and unnormalised log weight."""

    params: EppParams
    trajectory: PrevalenceTrajectory
    log_weight: float


@dataclass(frozen=True)
class Diagnostics:
    """Degeneracy diagnostics of one SIR run."""

    ess: float
    unique_count: int
    max_multiplicity: int
    constraint_pass_rate: float
    n_quadrature_failures: int = 0


@dataclass(frozen=True)
class PosteriorSample:
    """Resampled posterior: unique retained draws with multiplicities.

    Arrays are aligned: row i holds prior draw source_index[i], resampled
    multiplicity[i] times. rho rows are annual prevalence over years.
    """

    years: np.ndarray
    source_index: np.ndarray
    multiplicity: np.ndarray
    r: np.ndarray
    f0: np.ndarray
    t0: np.ndarray
    phi: np.ndarray
    rho: np.ndarray
    diagnostics: Diagnostics | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.multiplicity) < 1):
            raise ValueError("retained draws must have multiplicity >= 1")

    def __len__(self):
        return self.source_index.shape[0]

    @property
    def n_resampled(self):
        """Total resample count J (multiplicities summed)."""
        return int(np.sum(self.multiplicity))

    def params(self, i):
        return EppParams(
            r=float(self.r[i]),
            f0=float(self.f0[i]),
            t0=float(self.t0[i]),
            phi=float(self.phi[i]),
        )

    def trajectory(self, i):
        return PrevalenceTrajectory(years=self.years, rho=self.rho[i])

    def expanded_indices(self):
        """Row indices repeated by multiplicity (length J)."""
        return np.repeat(np.arange(len(self)), self.multiplicity)

    def year_column(self, year):
        years = np.asarray(self.years)
        pos = int(np.searchsorted(years, int(year)))
        if pos >= years.size or years[pos] != int(year):
            raise ValueError(f"year {year} not covered by the posterior grid")
        return self.rho[:, pos]


def compute_log_weights(rho, years, dataset, cfg):
    """Log weights for a batch of trajectories.

    rho has one row per draw, one column per grid year. Returns
    (log_weights, constraint_mask, n_quadrature_failures): weights are
    log-likelihood plus log of the constraint indicator; violating draws get
    -inf and skip the likelihood evaluation entirely; quadrature failures
    are demoted to -inf and counted.
    """
    rho = np.asarray(rho, dtype=float)
    years = np.asarray(years)
    n = rho.shape[0]
    mask = np.ones(n, dtype=bool)
    for c in cfg.constraints:
        pos = int(np.searchsorted(years, c.year))
        if pos >= years.size or years[pos] != c.year:
            raise ConfigError(
                f"constraint year {c.year} is not on the simulation grid "
                f"{years[0]}..{years[-1]}"
            )
        col = rho[:, pos]
        mask &= (col >= c.lower) & (col <= c.upper)

    log_weights = np.full(n, -np.inf)
    n_failures = 0
    if len(dataset) == 0:
        log_weights[mask] = 0.0
        return log_weights, mask, n_failures

    prepared = prepare_dataset(dataset, years)
    selected = np.flatnonzero(mask)
    if selected.size:
        loglik, _, status = _core.integrated_loglik_batch(
            rho[selected],
            prepared.w,
            prepared.v,
            prepared.year_idx,
            prepared.clinic_offsets,
            prepared.gauss_const + _prior_log_norm(cfg.sigma_prior),
            cfg.sigma_prior.beta1,
            cfg.sigma_prior.beta2,
            cfg.quadrature.rel_tol,
            cfg.quadrature.max_subdivisions,
            n_threads=cfg.n_threads,
        )
        failed = status != 0
        n_failures = int(np.count_nonzero(failed))
        loglik[failed] = -np.inf
        log_weights[selected] = loglik
    return log_weights, mask, n_failures


def weigh_draw(params, trajectory, dataset, cfg):
    """Weight a single draw; convenience wrapper around compute_log_weights."""
    logw, _, _ = compute_log_weights(
        trajectory.rho[None, :], trajectory.years, dataset, cfg
    )
    return WeightedDraw(
        params=params, trajectory=trajectory, log_weight=float(logw[0])
    )


def resample(log_weights, n_resample, seed):
    """Multinomial resampling: multiplicity per input draw, summing to
    n_resample. Probabilities are softmax of the log weights with the max
    subtracted, so adding any constant to all weights changes nothing."""
    log_weights = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(log_weights)
    if not np.any(finite):
        raise InferenceError(
            "posterior unreachable: no prior draw satisfies the constraints "
            "with positive likelihood"
        )
    w = np.exp(log_weights - np.max(log_weights[finite]))
    p = w / np.sum(w)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_STREAM_RESAMPLE,)))
    )
    return rng.multinomial(int(n_resample), p)


def diagnostics_report(log_weights, multiplicity, constraint_mask, n_quadrature_failures=0):
    """Diagnostics of a weighted sample and its resample."""
    log_weights = np.asarray(log_weights, dtype=float)
    multiplicity = np.asarray(multiplicity)
    finite = np.isfinite(log_weights)
    w = np.exp(log_weights - np.max(log_weights[finite]))
    ess = float(np.sum(w) ** 2 / np.sum(w * w))
    return Diagnostics(
        ess=ess,
        unique_count=int(np.count_nonzero(multiplicity)),
        max_multiplicity=int(np.max(multiplicity)),
        constraint_pass_rate=float(np.mean(np.asarray(constraint_mask, dtype=float))),
        n_quadrature_failures=int(n_quadrature_failures),
    )


def run_melding(cfg, dataset):
    """Full SIR pipeline: prior draws -> trajectories -> weights -> resample."""
    if cfg.n_prior < 100:
        raise ConfigError(
            f"n_prior={cfg.n_prior} is too small for importance resampling; "
            "need at least 100"
        )
    if not isinstance(dataset, Dataset):
        raise TypeError("dataset must be a likelihood.Dataset")
    grid = cfg.grid
    params = sample_inputs(cfg.prior, cfg.n_prior, cfg.seed)
    masses = death_kernel(grid, cfg.survival)
    rho = _core.simulate_batch(
        params.r,
        params.f0,
        params.t0,
        params.phi,
        cfg.demography.mu,
        cfg.demography.entry_rate,
        cfg.demography.kappa,
        cfg.survival.lambda0,
        masses,
        float(grid.start_year),
        grid.dt,
        grid.n_steps,
        grid.year_steps(),
        n_threads=cfg.n_threads,
    )
    log_weights, mask, n_failures = compute_log_weights(
        rho, grid.years, dataset, cfg
    )
    multiplicity = resample(log_weights, cfg.n_resample, cfg.seed)
    diag = diagnostics_report(log_weights, multiplicity, mask, n_failures)
    keep = np.flatnonzero(multiplicity)
    return PosteriorSample(
        years=grid.years,
        source_index=keep,
        multiplicity=multiplicity[keep],
        r=params.r[keep],
        f0=params.f0[keep],
        t0=params.t0[keep],
        phi=params.phi[keep],
        rho=rho[keep],
        diagnostics=diag,
    )
