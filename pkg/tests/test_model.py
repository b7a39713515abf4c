"""Epidemic model: recruitment curve, survival kernel, stepper properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from epimeld.model import (
    DEATH_HORIZON_YEARS,
    DemographyConfig,
    EppParams,
    PrevalenceTrajectory,
    SimGrid,
    SurvivalConfig,
    annualize,
    at_risk_fraction,
    chi,
    death_kernel,
    entry_count,
    simulate,
    simulate_states,
)

DEMOG = DemographyConfig()
SURV = SurvivalConfig()
GRID = SimGrid(1970, 2020, 0.1)

# Fig-1-style base point: epidemic rises to one peak, then declines
BASE = EppParams(r=2.0, f0=0.4, t0=1980.0, phi=0.0)


def weibull_survival(t):
    return np.exp(-((np.asarray(t, dtype=float) / SURV.weibull_scale) ** SURV.weibull_shape))


class TestAtRiskFraction:
    def test_worked_example(self):
        # chi = 0.7 - (1 - 0.4) = 0.1; the logistic form must agree with the
        # raw ratio exp(phi chi) / (exp(phi chi) - 1 + 1/f0)
        e = math.exp(0.5)
        expected = e / (e - 1.0 + 1.0 / 0.4)
        got = at_risk_fraction(0.7, 0.4, 5.0)
        assert got == pytest.approx(expected, abs=1e-15)
        assert got == pytest.approx(expit(0.5 + logit(0.4)), abs=1e-15)
        assert got == pytest.approx(0.523616, abs=5e-7)

    def test_chi_worked_example(self):
        assert chi(0.7, 0.4) == pytest.approx(0.1)
        assert chi(0.6, 0.4) == 0.0

    def test_neutral_point_returns_f0(self):
        # at x_frac = 1 - f0 the fraction equals f0 for any phi
        for phi in (-25.0, 0.0, 3.0, 40.0):
            assert at_risk_fraction(0.75, 0.25, phi) == pytest.approx(0.25, abs=1e-14)

    def test_boundaries(self):
        assert at_risk_fraction(0.3, 0.0, 7.0) == 0.0
        assert at_risk_fraction(0.3, 1.0, 7.0) == 1.0

    def test_vectorized(self):
        x = np.array([0.2, 0.6, 0.9])
        out = at_risk_fraction(x, 0.4, 2.0)
        assert out.shape == x.shape
        assert np.all((out > 0.0) & (out < 1.0))

    @given(
        x=st.floats(0.0, 1.0),
        f0=st.floats(0.01, 0.99),
        phi=st.floats(-50.0, 50.0),
    )
    def test_always_a_fraction(self, x, f0, phi):
        f = at_risk_fraction(x, f0, phi)
        assert 0.0 <= f <= 1.0

    @given(f0=st.floats(0.01, 0.99), phi=st.floats(-30.0, 30.0))
    def test_monotone_in_chi_when_phi_positive(self, f0, phi):
        lo = at_risk_fraction(1.0 - f0, f0, abs(phi))
        hi = at_risk_fraction(1.0 - f0 + 0.2, f0, abs(phi))
        assert hi >= lo


class TestDeathKernel:
    def test_first_step_mass_matches_survival_drop(self):
        kernel = death_kernel(GRID, SURV)
        expected = 1.0 - weibull_survival(0.1)
        assert kernel[0] == pytest.approx(expected, rel=1e-12)
        assert kernel[0] == pytest.approx(1.40e-5, rel=0.02)

    def test_every_mass_is_a_survival_difference(self):
        kernel = death_kernel(GRID, SURV)
        k = np.arange(1, kernel.size + 1)
        expected = weibull_survival((k - 1) * GRID.dt) - weibull_survival(k * GRID.dt)
        np.testing.assert_allclose(kernel, expected, rtol=1e-12)

    def test_total_mass_and_horizon(self):
        kernel = death_kernel(GRID, SURV)
        assert kernel.size == int(round(DEATH_HORIZON_YEARS / GRID.dt))
        # tail beyond 60 years is negligible
        assert kernel.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(kernel >= 0.0)

    def test_median_survival_close_to_nine_years(self):
        # interpolate the kernel CDF at a fine step; the analytic median is
        # scale * ln(2)^(1/shape)
        fine = SimGrid(1970, 2020, 0.001)
        kernel = death_kernel(fine, SURV)
        cdf = np.cumsum(kernel)
        j = int(np.searchsorted(cdf, 0.5))
        t_hi = (j + 1) * fine.dt
        frac = (0.5 - cdf[j - 1]) / (cdf[j] - cdf[j - 1])
        median = t_hi - fine.dt + frac * fine.dt
        analytic = SURV.weibull_scale * math.log(2.0) ** (1.0 / SURV.weibull_shape)
        assert analytic == pytest.approx(9.01, abs=0.005)
        assert median == pytest.approx(analytic, abs=0.01)


class TestGrid:
    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            SimGrid(1970, 2020, 0.3)
        with pytest.raises(ValueError):
            SimGrid(1970, 2020, 0.0)

    def test_rejects_empty_span(self):
        with pytest.raises(ValueError):
            SimGrid(2000, 2000, 0.1)

    def test_mid_year_step(self):
        # dt = 0.1: the sample for 1990 sits at 1990.5
        idx = GRID.year_steps()[GRID.year_index(1990)]
        assert GRID.step_times()[idx] == pytest.approx(1990.5)

    def test_final_year_has_true_mid_year_sample(self):
        idx = GRID.year_steps()[GRID.year_index(2020)]
        assert GRID.step_times()[idx] == pytest.approx(2020.5)
        assert idx <= GRID.n_steps


class TestAnnualize:
    def test_constant_series_identity(self):
        series = np.full(GRID.n_steps + 1, 0.125)
        traj = annualize(series, GRID)
        np.testing.assert_array_equal(traj.rho, 0.125)
        np.testing.assert_array_equal(traj.years, GRID.years)

    def test_linear_ramp_lands_on_ramp(self):
        times = GRID.step_times()
        series = 1e-4 * (times - times[0])
        traj = annualize(series, GRID)
        expected = 1e-4 * (GRID.years + 0.5 - GRID.start_year)
        np.testing.assert_allclose(traj.rho, expected, atol=1e-12)

    def test_rejects_short_series(self):
        with pytest.raises(ValueError):
            annualize(np.zeros(GRID.n_steps), GRID)


class TestParamValidation:
    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            EppParams(r=-1.0, f0=0.5, t0=1980.0, phi=0.0)
        with pytest.raises(ValueError):
            EppParams(r=1.0, f0=1.5, t0=1980.0, phi=0.0)
        with pytest.raises(ValueError):
            EppParams(r=1.0, f0=0.5, t0=1980.25, phi=0.0)
        with pytest.raises(ValueError):
            EppParams(r=1.0, f0=0.5, t0=1980.0, phi=math.inf)

    def test_rejects_t0_outside_grid(self):
        with pytest.raises(ValueError):
            simulate(EppParams(r=1.0, f0=0.5, t0=1969.0, phi=0.0), DEMOG, SURV, GRID)
        with pytest.raises(ValueError):
            simulate(EppParams(r=1.0, f0=0.5, t0=2021.0, phi=0.0), DEMOG, SURV, GRID)

    def test_rejects_bad_survival(self):
        with pytest.raises(ValueError):
            SurvivalConfig(weibull_shape=0.0)
        with pytest.raises(ValueError):
            SurvivalConfig(lambda0=1.0)

    def test_trajectory_validation(self):
        with pytest.raises(ValueError):
            PrevalenceTrajectory(years=np.array([1990]), rho=np.array([1.5]))
        with pytest.raises(ValueError):
            PrevalenceTrajectory(years=np.array([1990, 1991]), rho=np.array([0.1]))


class TestEntryCount:
    def test_pre_grid_lookback_uses_initial_state(self):
        state = simulate_states(BASE, DEMOG, SURV, GRID)
        # at the very first step nothing has changed 15 years earlier
        expected = DEMOG.entry_rate * 1.0 * GRID.dt
        assert entry_count(state, 1970.0, DEMOG) == pytest.approx(expected, rel=1e-12)

    def test_infected_entrants_weighted_by_kappa(self):
        state = simulate_states(BASE, DEMOG, SURV, GRID)
        t = 2000.0
        j = int(round((t - 15.0 - GRID.start_year) / GRID.dt))
        n15 = state.x[j] + state.z[j] + DEMOG.kappa * state.y[j]
        assert entry_count(state, t, DEMOG) == pytest.approx(
            DEMOG.entry_rate * n15 * GRID.dt, rel=1e-12
        )
        assert state.y[j] > 0.0

    def test_rejects_time_outside_grid(self):
        state = simulate_states(BASE, DEMOG, SURV, GRID)
        with pytest.raises(ValueError):
            entry_count(state, 1969.0, DEMOG)


class TestSimulate:
    def test_no_seed_no_epidemic(self):
        surv0 = SurvivalConfig(lambda0=0.0)
        traj = simulate(BASE, DEMOG, surv0, GRID)
        np.testing.assert_array_equal(traj.rho, 0.0)
        state = simulate_states(BASE, DEMOG, surv0, GRID)
        total = state.x + state.z + state.y
        np.testing.assert_allclose(state.x / total, 1.0 - BASE.f0, atol=1e-12)

    def test_pre_epidemic_silence(self):
        traj = simulate(BASE, DEMOG, SURV, GRID)
        before = traj.years < BASE.t0
        np.testing.assert_array_equal(traj.rho[before], 0.0)
        assert traj.rho[~before].max() > 0.0

    def test_single_peak_then_decline_toward_plateau(self):
        traj = simulate(BASE, DEMOG, SURV, GRID)
        peak = int(np.argmax(traj.rho))
        rising = np.diff(traj.rho[GRID.year_index(int(BASE.t0)) : peak + 1])
        assert np.all(rising >= 0.0)
        after = traj.rho[peak:]
        # declines well below the peak, then levels off (the approach to the
        # plateau may overshoot slightly, so only the tail must be flat)
        assert np.all(after <= after[0])
        assert after[0] - after[-1] > 0.1
        assert after[-1] > 0.0
        assert np.max(np.abs(np.diff(after[-5:]))) < 1e-3

    def test_peak_against_fine_step_reference(self):
        coarse = simulate(BASE, DEMOG, SURV, GRID)
        fine = simulate(BASE, DEMOG, SURV, SimGrid(1970, 2020, 0.005))
        assert abs(coarse.rho.max() - fine.rho.max()) < 0.002

    def test_refinement_halving_dt(self):
        base = simulate(BASE, DEMOG, SURV, GRID)
        halved = simulate(BASE, DEMOG, SURV, SimGrid(1970, 2020, 0.05))
        assert np.max(np.abs(base.rho - halved.rho)) < 1e-3

    def test_time_shift_is_exact_translation(self):
        a = simulate(EppParams(r=2.0, f0=0.4, t0=1980.0, phi=0.0), DEMOG, SURV, GRID)
        b = simulate(EppParams(r=2.0, f0=0.4, t0=1985.0, phi=0.0), DEMOG, SURV, GRID)
        # year y after 1980 matches year y + 5 after 1985
        overlap = GRID.years <= 2015
        shifted = b.rho[GRID.year_index(1975) :][: overlap.sum()]
        assert np.max(np.abs(a.rho[overlap] - shifted)) < 1e-6

    def test_larger_r_rises_faster_at_onset(self):
        slow = simulate(EppParams(r=1.0, f0=0.4, t0=1980.0, phi=0.0), DEMOG, SURV, GRID)
        fast = simulate(EppParams(r=3.0, f0=0.4, t0=1980.0, phi=0.0), DEMOG, SURV, GRID)
        window = (GRID.years > 1980) & (GRID.years <= 1985)
        assert np.all(fast.rho[window] > slow.rho[window])

    def test_trajectory_at_lookup(self):
        traj = simulate(BASE, DEMOG, SURV, GRID)
        assert traj.at(1990) == traj.rho[GRID.year_index(1990)]
        with pytest.raises(ValueError):
            traj.at(1969)

    @settings(max_examples=25, deadline=None)
    @given(
        r=st.floats(0.0, 15.0),
        f0=st.floats(0.0, 1.0),
        t0=st.integers(1970, 1990),
        phi=st.floats(-80.0, 80.0),
    )
    def test_state_nonnegative_prevalence_bounded(self, r, f0, t0, phi):
        params = EppParams(r=r, f0=f0, t0=float(t0), phi=phi)
        state = simulate_states(params, DEMOG, SURV, GRID)
        assert np.all(state.x >= 0.0)
        assert np.all(state.z >= 0.0)
        assert np.all(state.y >= 0.0)
        traj = simulate(params, DEMOG, SURV, GRID)
        assert np.all((traj.rho >= 0.0) & (traj.rho <= 1.0))

    def test_incidence_history_records_the_pulse(self):
        state = simulate_states(BASE, DEMOG, SURV, GRID)
        i_pulse = int(round((BASE.t0 - GRID.start_year) / GRID.dt))
        assert state.incidence[: i_pulse].max() == 0.0
        # pulse moves lambda0 * Z into Y within the t0 step
        assert state.incidence[i_pulse] > 0.0

    def test_simulate_matches_states_at_mid_year(self):
        state = simulate_states(BASE, DEMOG, SURV, GRID)
        traj = simulate(BASE, DEMOG, SURV, GRID)
        total = state.x + state.z + state.y
        rho_steps = state.y / total
        np.testing.assert_allclose(traj.rho, rho_steps[GRID.year_steps()], atol=1e-15)
