"""Integrated random-effects likelihood of clinic counts given a trajectory.

Observed counts are probit-transformed with a continuity correction,
W_st = probit((Y_st + 1/2)/(N_st + 1)), and modelled as W_st = probit(rho_t)
+ b_s + eps_st where b_s is a persistent clinic offset with variance sigma^2
and eps_st has the delta-method variance v_st. Conditional on sigma^2 the
clinic vectors are independent zero-mean Gaussians with a rank-one-plus-
diagonal covariance, evaluated via the Sherman-Morrison identities; sigma^2
itself carries an inverse-gamma prior and is integrated out numerically on
the unit interval after the substitution u = sigma^2 / (1 + sigma^2).

The inverse-gamma prior uses shape beta1 and RATE 1/beta2, the reading fixed
by the closed-form marginal of b, which is proportional to
(b^2/2 + 1/beta2)^(-beta1-1/2).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtri

from . import _core
from .errors import DataError, QuadratureError

__all__ = [
    "ClinicObservation",
    "Dataset",
    "PreparedDataset",
    "QuadratureConfig",
    "SigmaPrior",
    "TransformedObs",
    "clinic_marginal_logdensity",
    "integrated_log_likelihood",
    "prepare_dataset",
    "residuals",
    "sigma2_prior_logdensity",
    "transform_observation",
]


@dataclass(frozen=True)
class ClinicObservation:
    clinic_id: str
    year: int
    n_tested: int
    n_positive: int

    def __post_init__(self):
        if self.n_tested < 1:
            raise ValueError(f"n_tested must be >= 1, got {self.n_tested}")
        if not 0 <= self.n_positive <= self.n_tested:
            raise ValueError(
                f"n_positive must be in [0, n_tested], got "
                f"{self.n_positive}/{self.n_tested}"
            )


@dataclass(frozen=True)
class TransformedObs:
    """Probit-scale observation: corrected proportion x, probit w, variance v."""

    x: float
    w: float
    v: float


@dataclass(frozen=True)
class SigmaPrior:
    """Inverse-gamma prior on the clinic-effect variance: shape beta1,
    rate 1/beta2."""

    beta1: float = 0.58
    beta2: float = 93.0

    def __post_init__(self):
        if not self.beta1 > 0.0:
            raise ValueError(f"beta1 must be > 0, got {self.beta1}")
        if not self.beta2 > 0.0:
            raise ValueError(f"beta2 must be > 0, got {self.beta2}")


@dataclass(frozen=True)
class QuadratureConfig:
    rel_tol: float = 1e-6
    max_subdivisions: int = 200

    def __post_init__(self):
        if not self.rel_tol > 0.0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")
        if self.max_subdivisions < 1:
            raise ValueError(
                f"max_subdivisions must be >= 1, got {self.max_subdivisions}"
            )


class Dataset:
    """Clinic observations in canonical order.

    Clinics keep their first-appearance order; observations are sorted by
    year within each clinic. At most one observation per (clinic, year).
    """

    __slots__ = ("observations", "clinics", "_by_clinic")

    def __init__(self, observations):
        by_clinic = {}
        for obs in observations:
            if not isinstance(obs, ClinicObservation):
                raise TypeError("observations must be ClinicObservation instances")
            by_clinic.setdefault(obs.clinic_id, []).append(obs)
        canonical = []
        for clinic_id, group in by_clinic.items():
            group.sort(key=lambda o: o.year)
            years = [o.year for o in group]
            if len(set(years)) != len(years):
                dup = next(y for y in years if years.count(y) > 1)
                raise DataError(
                    f"duplicate observation for clinic {clinic_id!r} in year {dup}"
                )
            canonical.extend(group)
        self.observations = tuple(canonical)
        self.clinics = tuple(by_clinic)
        self._by_clinic = {c: tuple(by_clinic[c]) for c in by_clinic}

    def __len__(self):
        return len(self.observations)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.observations == other.observations

    def __hash__(self):
        return hash(self.observations)

    def clinic_observations(self, clinic_id):
        try:
            return self._by_clinic[clinic_id]
        except KeyError:
            raise DataError(f"unknown clinic {clinic_id!r}") from None

    def truncated(self, year):
        """Observations with year <= the cutoff (clinics may drop out)."""
        return Dataset(o for o in self.observations if o.year <= year)

    def years(self):
        return sorted({o.year for o in self.observations})


def transform_observation(obs):
    """Probit transform with continuity correction and delta-method variance."""
    x = (obs.n_positive + 0.5) / (obs.n_tested + 1.0)
    w = float(ndtri(x))
    v = 2.0 * math.pi * math.exp(w * w) * x * (1.0 - x) / obs.n_tested
    return TransformedObs(x=x, w=w, v=v)


@dataclass(frozen=True)
class PreparedDataset:
    """Flat per-observation arrays the kernels consume.

    Observations follow dataset order, grouped per clinic with CSR-style
    clinic_offsets; year_idx maps each observation to its trajectory column.
    gauss_const collects the Gaussian normalising constants
    -(T/2) log(2 pi) - (1/2) sum log v, which do not depend on the draw.
    """

    clinics: tuple
    w: np.ndarray
    v: np.ndarray
    year_idx: np.ndarray
    clinic_offsets: np.ndarray
    gauss_const: float


def prepare_dataset(dataset, years):
    """Build kernel-ready arrays for a dataset on the given grid years."""
    years = np.asarray(years)
    w = []
    v = []
    year_idx = []
    offsets = [0]
    for clinic_id in dataset.clinics:
        for obs in dataset.clinic_observations(clinic_id):
            pos = int(np.searchsorted(years, obs.year))
            if pos >= years.size or years[pos] != obs.year:
                raise DataError(
                    f"observation year {obs.year} (clinic {clinic_id!r}) "
                    f"is outside the trajectory grid "
                    f"{years[0]}..{years[-1]}"
                )
            t = transform_observation(obs)
            w.append(t.w)
            v.append(t.v)
            year_idx.append(pos)
        offsets.append(len(w))
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    gauss_const = float(-0.5 * w.size * math.log(2.0 * math.pi) - 0.5 * np.sum(np.log(v)))
    return PreparedDataset(
        clinics=dataset.clinics,
        w=w,
        v=v,
        year_idx=np.asarray(year_idx, dtype=np.intp),
        clinic_offsets=np.asarray(offsets, dtype=np.intp),
        gauss_const=gauss_const,
    )


def residuals(traj, dataset):
    """Probit-scale residuals d_st = W_st - probit(rho_t), one array per
    clinic in dataset order. Trajectory prevalence is clamped away from
    {0, 1} so residuals stay finite."""
    out = []
    for clinic_id in dataset.clinics:
        obs_list = dataset.clinic_observations(clinic_id)
        d = np.empty(len(obs_list))
        for k, obs in enumerate(obs_list):
            rho = min(max(traj.at(obs.year), _core.RHO_CLAMP), 1.0 - _core.RHO_CLAMP)
            d[k] = transform_observation(obs).w - float(ndtri(rho))
        out.append(d)
    return out


def clinic_marginal_logdensity(d, v, sigma2):
    """Zero-mean MVN log density with covariance sigma^2 * ones + diag(v).

    Uses the Sherman-Morrison inverse and the matrix determinant lemma, so
    the cost is linear in the number of observations.
    """
    d = np.asarray(d, dtype=float)
    v = np.asarray(v, dtype=float)
    if d.shape != v.shape:
        raise ValueError("residuals and variances must have equal length")
    if np.any(v <= 0.0):
        raise ValueError("variances must be strictly positive")
    if sigma2 < 0.0:
        raise ValueError(f"sigma2 must be >= 0, got {sigma2}")
    inv_v = 1.0 / v
    prec = float(np.sum(inv_v))
    quad = float(np.sum(d * d * inv_v))
    bsum = float(np.sum(d * inv_v))
    quad -= sigma2 / (1.0 + sigma2 * prec) * bsum * bsum
    logdet = float(np.sum(np.log(v))) + math.log1p(sigma2 * prec)
    return -0.5 * d.size * math.log(2.0 * math.pi) - 0.5 * logdet - 0.5 * quad


def _prior_log_norm(prior):
    return prior.beta1 * math.log(1.0 / prior.beta2) - float(gammaln(prior.beta1))


def sigma2_prior_logdensity(sigma2, prior):
    """Log density of the inverse-gamma prior (shape beta1, rate 1/beta2)."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0.0):
        raise ValueError("sigma2 must be > 0")
    out = (
        _prior_log_norm(prior)
        - (prior.beta1 + 1.0) * np.log(sigma2)
        - 1.0 / (prior.beta2 * sigma2)
    )
    if out.ndim == 0:
        return float(out)
    return out


def integrated_log_likelihood(traj, dataset, prior, quad, n_threads=1):
    """log p(W | rho): the clinic-effect variance integrated out.

    Empty datasets have likelihood 1. Raises QuadratureError when the
    adaptive rule cannot reach quad.rel_tol within quad.max_subdivisions;
    the message carries the achieved error estimate.
    """
    if len(dataset) == 0:
        return 0.0
    prepared = prepare_dataset(dataset, traj.years)
    rho = np.asarray(traj.rho, dtype=float)[None, :]
    loglik, rel_err, status = _core.integrated_loglik_batch(
        rho,
        prepared.w,
        prepared.v,
        prepared.year_idx,
        prepared.clinic_offsets,
        prepared.gauss_const + _prior_log_norm(prior),
        prior.beta1,
        prior.beta2,
        quad.rel_tol,
        quad.max_subdivisions,
        n_threads=n_threads,
    )
    if status[0] != 0:
        raise QuadratureError(
            f"sigma^2 quadrature did not reach rel_tol={quad.rel_tol:g} within "
            f"{quad.max_subdivisions} subdivisions "
            f"(achieved relative error {rel_err[0]:.3e})"
        )
    return float(loglik[0])
