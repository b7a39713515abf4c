"""Clinic-level posterior prediction and backtesting.

For a clinic with past residuals d_s the random effect b is drawn by
rejection: propose from the Gaussian that treats the effect variance as
fixed at its conditional mean scale, accept with the ratio of the
integrated-out Student-t tail to the proposal, which is always <= 1. A
clinic with no usable history falls back to the exact prior marginal of b,
a scaled Student-t. Each posterior draw then yields a noisy probit
prevalence W ~ N(omega + b, v) whose variance comes from the same
delta-method formula as the likelihood, and the returned draw is Phi(W).

Population quantiles over multiplicity-weighted trajectories reproduce
numpy's linear-interpolation quantile semantics without materialising the
expanded sample.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from ._core import RHO_CLAMP
from .errors import DataError
from .likelihood import SigmaPrior, transform_observation
from .melding import run_melding

__all__ = [
    "CoverageReport",
    "PointPrediction",
    "PredictiveDraws",
    "PredictiveRequest",
    "backtest",
    "clinic_effect_logdensity",
    "population_quantiles",
    "predict_clinic",
    "sample_clinic_effect",
    "sample_clinic_effects",
]

# RNG substream key for predictive sampling (prior uses 0..3, resample 10)
_STREAM_PREDICT = 20

# Probit-scale values implied by clamping prevalences to [RHO_CLAMP, 1-RHO_CLAMP]
_W_MAX = -ndtri(RHO_CLAMP)


@dataclass(frozen=True)
class PredictiveRequest:
    clinic_id: str
    year: int
    n_tested: int

    def __post_init__(self):
        if self.n_tested < 1:
            raise ValueError(f"n_tested must be >= 1, got {self.n_tested}")


@dataclass(frozen=True)
class PredictiveDraws:
    """Posterior predictive prevalence draws, strictly inside (0, 1)."""

    request: PredictiveRequest
    draws: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if d.size == 0:
            raise ValueError("predictive draws must be non-empty")
        if np.any(d <= 0.0) or np.any(d >= 1.0):
            raise ValueError("predictive draws must lie strictly inside (0, 1)")

    def quantiles(self, probs):
        return np.quantile(np.asarray(self.draws), np.asarray(probs))


@dataclass(frozen=True)
class PointPrediction:
    """One held-out observation scored against its predictive interval."""

    clinic_id: str
    year: int
    n_tested: int
    observed: float
    q025: float
    q500: float
    q975: float
    inside: bool


@dataclass(frozen=True)
class CoverageReport:
    truncate_year: int
    points: tuple
    coverage: float


def clinic_effect_logdensity(b, d, v, prior):
    """Unnormalised log density of the clinic effect given residuals d with
    variances v, after integrating out the effect variance."""
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    v = np.asarray(v, dtype=float)
    resid = d - b[..., None]
    quad = np.sum(resid * resid / v, axis=-1)
    tail = (prior.beta1 + 0.5) * np.log(0.5 * b * b + 1.0 / prior.beta2)
    return -0.5 * quad - tail


def _rejection_sample(rng, mean, tau, prior):
    """Vectorised rejection sampler for clinic effects.

    mean is per-draw (the precision-weighted residual mean), tau the shared
    proposal sd. The acceptance ratio (1 + beta2 b^2 / 2)^-(beta1 + 1/2)
    never exceeds one.
    """
    mean = np.asarray(mean, dtype=float)
    out = np.empty_like(mean)
    pending = np.arange(mean.size)
    power = prior.beta1 + 0.5
    while pending.size:
        prop = rng.normal(mean[pending], tau)
        log_accept = -power * np.log1p(0.5 * prior.beta2 * prop * prop)
        assert np.all(log_accept <= 1e-12)
        hit = rng.random(pending.size) < np.exp(log_accept)
        out[pending[hit]] = prop[hit]
        pending = pending[~hit]
    return out


def _prior_effect_sample(rng, n, prior):
    """Exact draw from the marginal prior of b: Student-t with 2*beta1
    degrees of freedom scaled by 1/sqrt(beta1*beta2)."""
    return rng.standard_t(2.0 * prior.beta1, size=n) / np.sqrt(
        prior.beta1 * prior.beta2
    )


def sample_clinic_effects(d, v, prior, seed, n_draws):
    """n_draws clinic effects given residual history (d, v); empty history
    falls back to the prior marginal."""
    d = np.asarray(d, dtype=float)
    v = np.asarray(v, dtype=float)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_STREAM_PREDICT,)))
    )
    if d.size == 0:
        return _prior_effect_sample(rng, n_draws, prior)
    tau2 = 1.0 / np.sum(1.0 / v)
    mean = tau2 * np.sum(d / v)
    return _rejection_sample(rng, np.full(n_draws, mean), np.sqrt(tau2), prior)


def sample_clinic_effect(d, v, prior, seed):
    """Single clinic-effect draw; see sample_clinic_effects."""
    return float(sample_clinic_effects(d, v, prior, seed, 1)[0])


def _predictive_draws(posterior, clinic_obs, request, prior, seed):
    """Predictive prevalence draws for one clinic-year.

    clinic_obs is the clinic's observation history (possibly empty, for
    clinics absent from the fitting window). One draw per unit of posterior
    multiplicity.
    """
    rho_col = posterior.year_column(request.year)
    rho_col = np.clip(rho_col, RHO_CLAMP, 1.0 - RHO_CLAMP)
    omega_unique = ndtri(rho_col)

    reps = posterior.expanded_indices()
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_STREAM_PREDICT,)))
    )

    if clinic_obs:
        years = np.asarray(posterior.years)
        w_obs = np.empty(len(clinic_obs))
        v_obs = np.empty(len(clinic_obs))
        col = np.empty(len(clinic_obs), dtype=np.intp)
        for k, obs in enumerate(clinic_obs):
            t = transform_observation(obs)
            w_obs[k] = t.w
            v_obs[k] = t.v
            pos = int(np.searchsorted(years, obs.year))
            if pos >= years.size or years[pos] != obs.year:
                raise DataError(
                    f"observation year {obs.year} is outside the posterior grid"
                )
            col[k] = pos
        rho_hist = np.clip(posterior.rho[:, col], RHO_CLAMP, 1.0 - RHO_CLAMP)
        d_unique = w_obs[None, :] - ndtri(rho_hist)
        tau2 = 1.0 / np.sum(1.0 / v_obs)
        mean_unique = tau2 * (d_unique / v_obs[None, :]).sum(axis=1)
        b = _rejection_sample(rng, mean_unique[reps], np.sqrt(tau2), prior)
    else:
        b = _prior_effect_sample(rng, reps.size, prior)

    center = omega_unique[reps] + b
    # Clamp the variance inputs the same way trajectory prevalences are
    # clamped; beyond +-Phi^-1(RHO_CLAMP) the delta formula overflows while
    # describing prevalences indistinguishable from 0 or 1.
    c_eff = np.clip(center, -_W_MAX, _W_MAX)
    gamma = ndtr(c_eff)
    v_pred = (
        2.0 * np.pi * np.exp(c_eff * c_eff) * gamma * (1.0 - gamma) / request.n_tested
    )
    w_draw = rng.normal(center, np.sqrt(v_pred))
    p = ndtr(w_draw)
    tiny = np.finfo(float).tiny
    p = np.clip(p, tiny, 1.0 - np.finfo(float).epsneg)
    return PredictiveDraws(request=request, draws=p)


def predict_clinic(posterior, dataset, request, prior=None, seed=0):
    """Posterior predictive draws for one clinic at one year.

    The clinic must exist in the dataset; its full observation history
    conditions the random-effect draw. prior defaults to the standard
    effect-variance prior.
    """
    if prior is None:
        prior = SigmaPrior()
    clinic_obs = dataset.clinic_observations(request.clinic_id)
    return _predictive_draws(posterior, clinic_obs, request, prior, seed)


def population_quantiles(posterior, probs):
    """Multiplicity-weighted prevalence quantiles per grid year.

    Returns an array of shape (n_years, len(probs)) matching numpy's
    linear-interpolation quantile of the multiplicity-expanded sample.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("probs must be a non-empty 1-d sequence")
    if np.any(probs <= 0.0) or np.any(probs >= 1.0):
        raise ValueError("quantile probabilities must lie strictly inside (0, 1)")
    mult = np.asarray(posterior.multiplicity, dtype=np.int64)
    total = int(mult.sum())
    out = np.empty((posterior.rho.shape[1], probs.size))
    pos = (total - 1) * probs
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    hi = np.minimum(lo + 1, total - 1)
    for j in range(posterior.rho.shape[1]):
        col = posterior.rho[:, j]
        order = np.argsort(col, kind="stable")
        cum = np.cumsum(mult[order])
        vals = col[order]
        x_lo = vals[np.searchsorted(cum, lo + 1, side="left")]
        x_hi = vals[np.searchsorted(cum, hi + 1, side="left")]
        out[j] = x_lo + frac * (x_hi - x_lo)
    return out


def backtest(dataset, truncate_year, cfg, seed=0):
    """Fit on observations up to truncate_year, score every later one.

    Each held-out observation gets predictive draws conditioned on the
    clinic's in-window history (clinics with none use the prior effect
    marginal) and its actual sample size, and is scored against the central
    95% interval of those draws.
    """
    truncate_year = int(truncate_year)
    held_out = [o for o in dataset.observations if o.year > truncate_year]
    if not held_out:
        raise DataError(
            f"truncating at {truncate_year} leaves no held-out observations"
        )
    fit_ds = dataset.truncated(truncate_year)
    if len(fit_ds) == 0:
        raise DataError(
            f"no observations at or before {truncate_year} to fit on"
        )
    posterior = run_melding(cfg, fit_ds)

    base = np.random.SeedSequence(seed, spawn_key=(_STREAM_PREDICT, 1))
    point_seeds = base.generate_state(len(held_out))
    points = []
    for k, obs in enumerate(held_out):
        if obs.clinic_id in fit_ds.clinics:
            history = fit_ds.clinic_observations(obs.clinic_id)
        else:
            history = ()
        request = PredictiveRequest(
            clinic_id=obs.clinic_id, year=obs.year, n_tested=obs.n_tested
        )
        draws = _predictive_draws(
            posterior, history, request, cfg.sigma_prior, int(point_seeds[k])
        )
        q025, q500, q975 = draws.quantiles((0.025, 0.5, 0.975))
        observed = obs.n_positive / obs.n_tested
        points.append(
            PointPrediction(
                clinic_id=obs.clinic_id,
                year=obs.year,
                n_tested=obs.n_tested,
                observed=observed,
                q025=float(q025),
                q500=float(q500),
                q975=float(q975),
                inside=bool(q025 <= observed <= q975),
            )
        )
    coverage = float(np.mean([p.inside for p in points]))
    return CoverageReport(
        truncate_year=truncate_year, points=tuple(points), coverage=coverage
    )
