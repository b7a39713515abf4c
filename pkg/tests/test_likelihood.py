"""Observation model: probit transform, rank-one MVN identity, the
integrated random-effects likelihood against dense and quadrature oracles."""

import math

import helpers
import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import ndtri

from epimeld.errors import DataError, QuadratureError
from epimeld.likelihood import (
    ClinicObservation,
    Dataset,
    QuadratureConfig,
    SigmaPrior,
    clinic_marginal_logdensity,
    integrated_log_likelihood,
    prepare_dataset,
    residuals,
    sigma2_prior_logdensity,
    transform_observation,
)
from epimeld.model import PrevalenceTrajectory

PRIOR = SigmaPrior()
QUAD = QuadratureConfig()


def flat_trajectory(years, rho):
    years = np.asarray(years)
    return PrevalenceTrajectory(years=years, rho=np.full(years.size, rho))


def dense_mvn_logpdf(d, v, sigma2):
    """Dense evaluation of N(d; 0, diag(v) + sigma2 * ones)."""
    d = np.asarray(d, dtype=float)
    cov = np.diag(np.asarray(v, dtype=float)) + sigma2
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    quad = d @ np.linalg.solve(cov, d)
    return -0.5 * (d.size * math.log(2.0 * math.pi) + logdet + quad)


class TestTransform:
    def test_balanced_example(self):
        t = transform_observation(ClinicObservation("a", 1990, 100, 50))
        assert t.x == pytest.approx(50.5 / 101.0, rel=1e-15)
        assert t.w == pytest.approx(0.0, abs=1e-12)
        # 2 pi exp(0) * 0.25 / 100
        assert t.v == pytest.approx(2.0 * math.pi * 0.25 / 100.0, rel=1e-10)
        assert t.v == pytest.approx(0.0157080, abs=5e-8)

    def test_zero_count_example(self):
        t = transform_observation(ClinicObservation("a", 1990, 100, 0))
        assert t.x == pytest.approx(0.5 / 101.0, rel=1e-15)
        assert t.w == pytest.approx(ndtri(0.5 / 101.0), rel=1e-12)
        assert t.w == pytest.approx(-2.57927, abs=5e-5)
        assert t.v > 0.0

    def test_full_count_is_mirror_of_zero(self):
        lo = transform_observation(ClinicObservation("a", 1990, 100, 0))
        hi = transform_observation(ClinicObservation("a", 1990, 100, 100))
        assert hi.w == pytest.approx(-lo.w, rel=1e-12)
        assert hi.v == pytest.approx(lo.v, rel=1e-12)

    def test_variance_formula(self):
        t = transform_observation(ClinicObservation("a", 1990, 250, 37))
        x = 37.5 / 251.0
        w = ndtri(x)
        v = 2.0 * math.pi * math.exp(w * w) * x * (1.0 - x) / 250.0
        assert t.w == pytest.approx(w, rel=1e-15)
        assert t.v == pytest.approx(v, rel=1e-15)


class TestResiduals:
    def test_worked_example(self):
        # W = -1.0 observed against rho = 0.2
        traj = flat_trajectory([1990], 0.2)
        # choose counts giving W close to -1: x = Phi(-1) => Y/N tuned by hand
        d = -1.0 - ndtri(0.2)
        assert d == pytest.approx(-0.15838, abs=5e-6)

    def test_residuals_per_clinic(self):
        obs = [
            ClinicObservation("a", 1990, 100, 20),
            ClinicObservation("a", 1991, 100, 30),
            ClinicObservation("b", 1990, 200, 10),
        ]
        ds = Dataset(obs)
        traj = flat_trajectory([1989, 1990, 1991], 0.2)
        res = residuals(traj, ds)
        assert len(res) == len(ds.clinics)
        d_a = res[0]
        assert d_a.shape == (2,)
        t0 = transform_observation(obs[0])
        assert d_a[0] == pytest.approx(t0.w - ndtri(0.2), rel=1e-12)

    def test_extreme_prevalence_is_clamped(self):
        ds = Dataset([ClinicObservation("a", 1990, 100, 20)])
        traj = flat_trajectory([1990], 0.0)
        d = residuals(traj, ds)[0]
        assert np.isfinite(d[0])
        assert d[0] == pytest.approx(
            transform_observation(ds.observations[0]).w - ndtri(1e-12), rel=1e-12
        )


class TestDataset:
    def test_clinic_order_first_appearance(self):
        ds = Dataset(
            [
                ClinicObservation("z", 1991, 10, 1),
                ClinicObservation("a", 1990, 10, 1),
                ClinicObservation("z", 1990, 10, 1),
            ]
        )
        assert ds.clinics == ("z", "a")
        # within clinic, observations are year-sorted
        assert [o.year for o in ds.clinic_observations("z")] == [1990, 1991]

    def test_duplicate_rejected(self):
        with pytest.raises(DataError):
            Dataset(
                [
                    ClinicObservation("a", 1990, 10, 1),
                    ClinicObservation("a", 1990, 20, 2),
                ]
            )

    def test_unknown_clinic(self):
        ds = Dataset([ClinicObservation("a", 1990, 10, 1)])
        with pytest.raises(DataError):
            ds.clinic_observations("b")

    def test_truncated(self):
        ds = Dataset(
            [
                ClinicObservation("a", 1990, 10, 1),
                ClinicObservation("a", 1995, 10, 1),
                ClinicObservation("b", 1996, 10, 1),
            ]
        )
        cut = ds.truncated(1995)
        assert len(cut) == 2
        assert cut.clinics == ("a",)
        assert ds.years() == [1990, 1995, 1996]

    def test_observation_validation(self):
        with pytest.raises(ValueError):
            ClinicObservation("a", 1990, 100, 101)
        with pytest.raises(ValueError):
            ClinicObservation("a", 1990, 0, 0)

    def test_prepare_rejects_off_grid_years(self):
        ds = Dataset([ClinicObservation("a", 1969, 10, 1)])
        with pytest.raises(DataError):
            prepare_dataset(ds, np.arange(1970, 2021))


class TestMarginalDensity:
    def test_matches_dense_on_fuzzed_cases(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            m = int(rng.integers(1, 9))
            v = np.exp(rng.uniform(-6.0, 1.0, size=m))
            d = rng.normal(0.0, 1.0, size=m)
            sigma2 = float(np.exp(rng.uniform(-9.0, 2.3)))
            got = clinic_marginal_logdensity(d, v, sigma2)
            want = dense_mvn_logpdf(d, v, sigma2)
            assert got == pytest.approx(want, abs=1e-10)

    def test_sigma2_zero_reduces_to_independent(self):
        v = np.array([0.5, 0.25])
        d = np.array([0.3, -0.2])
        got = clinic_marginal_logdensity(d, v, 0.0)
        want = stats.norm.logpdf(d, scale=np.sqrt(v)).sum()
        assert got == pytest.approx(want, rel=1e-12)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            clinic_marginal_logdensity(np.array([1.0]), np.array([0.0]), 0.1)
        with pytest.raises(ValueError):
            clinic_marginal_logdensity(np.array([1.0]), np.array([1.0, 2.0]), 0.1)


class TestSigmaPrior:
    def test_mode(self):
        # inverse-gamma(shape, rate) mode = rate / (shape + 1)
        grid = np.linspace(1e-4, 0.05, 20001)
        dens = sigma2_prior_logdensity(grid, PRIOR)
        mode = grid[int(np.argmax(dens))]
        expected = (1.0 / PRIOR.beta2) / (PRIOR.beta1 + 1.0)
        assert mode == pytest.approx(expected, abs=5e-6)
        assert expected == pytest.approx(0.0068055, abs=5e-7)

    def test_normalized(self):
        total, err = integrate.quad(
            lambda s2: math.exp(sigma2_prior_logdensity(s2, PRIOR)),
            0.0,
            np.inf,
            limit=200,
        )
        assert total == pytest.approx(1.0, abs=max(1e-9, 10 * err))

    def test_matches_scipy_invgamma(self):
        s2 = np.array([1e-3, 1e-2, 0.1, 1.0, 10.0])
        want = stats.invgamma.logpdf(s2, PRIOR.beta1, scale=1.0 / PRIOR.beta2)
        got = sigma2_prior_logdensity(s2, PRIOR)
        np.testing.assert_allclose(got, want, rtol=1e-12)


def quad_oracle_loglik(traj, dataset, prior):
    """Independent route to the integrated likelihood: dense per-clinic MVN
    densities integrated over sigma2 with scipy's adaptive quadrature."""
    per_clinic = []
    for clinic in dataset.clinics:
        obs = dataset.clinic_observations(clinic)
        ts = [transform_observation(o) for o in obs]
        d = np.array(
            [
                t.w - ndtri(min(max(traj.at(o.year), 1e-12), 1.0 - 1e-12))
                for t, o in zip(ts, obs)
            ]
        )
        v = np.array([t.v for t in ts])
        per_clinic.append((d, v))

    def logf(sigma2):
        out = sigma2_prior_logdensity(sigma2, prior)
        for d, v in per_clinic:
            out += dense_mvn_logpdf(d, v, sigma2)
        return out

    # factor out the peak before exponentiating
    grid = np.exp(np.linspace(math.log(1e-7), math.log(1e3), 200))
    logs = np.array([logf(s) for s in grid])
    peak = float(np.max(logs))
    s_peak = float(grid[int(np.argmax(logs))])
    # quad refuses break points alongside an infinite limit, so split there
    cut = s_peak * 100.0
    head, _ = integrate.quad(
        lambda s2: math.exp(logf(s2) - peak),
        0.0,
        cut,
        points=[s_peak / 10.0, s_peak, s_peak * 10.0],
        limit=400,
    )
    tail, _ = integrate.quad(
        lambda s2: math.exp(logf(s2) - peak), cut, np.inf, limit=400
    )
    return peak + math.log(head + tail)


class TestIntegratedLikelihood:
    def test_empty_dataset_is_flat(self):
        traj = flat_trajectory([1990], 0.2)
        assert integrated_log_likelihood(traj, Dataset([]), PRIOR, QUAD) == 0.0

    def test_matches_scipy_quadrature_oracle(self):
        rng = np.random.default_rng(7)
        years = np.arange(1988, 1998)
        for case in range(8):
            rho = np.clip(rng.uniform(0.02, 0.4) + rng.normal(0.0, 0.02, years.size), 0.005, 0.6)
            traj = PrevalenceTrajectory(years=years, rho=rho)
            obs = []
            for c in range(int(rng.integers(1, 4))):
                for year in rng.choice(years, size=int(rng.integers(2, 6)), replace=False):
                    n = int(rng.integers(50, 500))
                    k = int(rng.binomial(n, rho[year - years[0]]))
                    obs.append(ClinicObservation(f"c{c}", int(year), n, k))
            ds = Dataset(obs)
            got = integrated_log_likelihood(traj, ds, PRIOR, QUAD)
            want = quad_oracle_loglik(traj, ds, PRIOR)
            assert got == pytest.approx(want, abs=1e-5), f"case {case}"

    def test_clinic_permutation_invariance(self):
        ds, traj, _ = helpers.synthetic_dataset(seed=3)
        base = integrated_log_likelihood(traj, ds, PRIOR, QUAD)
        swapped = Dataset(
            sorted(ds.observations, key=lambda o: (-ord(o.clinic_id[-1]), o.year))
        )
        assert swapped.clinics != ds.clinics
        got = integrated_log_likelihood(traj, swapped, PRIOR, QUAD)
        assert got == pytest.approx(base, abs=1e-11)

    def test_maximized_near_observed_rate(self):
        # all clinics observe 20%: the flat trajectory maximizing the
        # likelihood should sit close to 0.2
        obs = [
            ClinicObservation(f"c{c}", year, 500, 100)
            for c in range(3)
            for year in (1990, 1992, 1994)
        ]
        ds = Dataset(obs)
        years = np.arange(1989, 1996)
        cs = np.linspace(0.10, 0.30, 81)
        logliks = [
            integrated_log_likelihood(flat_trajectory(years, c), ds, PRIOR, QUAD)
            for c in cs
        ]
        best = cs[int(np.argmax(logliks))]
        assert abs(best - 0.2) < 0.02

    def test_likelihood_penalizes_misfit(self):
        ds, traj, _ = helpers.synthetic_dataset(seed=11)
        good = integrated_log_likelihood(traj, ds, PRIOR, QUAD)
        years = np.asarray(traj.years)
        bad = integrated_log_likelihood(flat_trajectory(years, 0.9), ds, PRIOR, QUAD)
        assert good > bad + 100.0

    def test_unreachable_tolerance_raises(self):
        ds, traj, _ = helpers.synthetic_dataset(seed=5)
        strict = QuadratureConfig(rel_tol=1e-16, max_subdivisions=3)
        with pytest.raises(QuadratureError):
            integrated_log_likelihood(traj, ds, PRIOR, strict)

    def test_quadrature_config_validation(self):
        with pytest.raises(ValueError):
            QuadratureConfig(rel_tol=0.0)
        with pytest.raises(ValueError):
            QuadratureConfig(max_subdivisions=0)
