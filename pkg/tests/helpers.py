"""Shared builders for synthetic calibration data."""

import numpy as np
from scipy.special import ndtr, ndtri

from epimeld.likelihood import ClinicObservation, Dataset
from epimeld.model import (
    DemographyConfig,
    EppParams,
    SimGrid,
    SurvivalConfig,
    simulate,
)

DEFAULT_TRUTH = EppParams(r=1.8, f0=0.25, t0=1978.0, phi=-3.0)


def truth_trajectory(truth=DEFAULT_TRUTH, grid=None):
    grid = grid or SimGrid(1970, 2020, 0.1)
    return simulate(truth, DemographyConfig(), SurvivalConfig(), grid)


def synthetic_dataset(
    seed=0,
    truth=DEFAULT_TRUTH,
    grid=None,
    n_clinics=5,
    years=range(1988, 2000),
    sigma=0.15,
    n_tested=300,
):
    """Counts drawn from the model at known parameters with persistent
    clinic effects on the probit scale. Returns (dataset, trajectory,
    effects)."""
    rng = np.random.default_rng(seed)
    traj = truth_trajectory(truth, grid)
    effects = rng.normal(0.0, sigma, size=n_clinics)
    obs = []
    for c in range(n_clinics):
        for year in years:
            gamma = ndtr(ndtri(traj.at(int(year))) + effects[c])
            k = int(rng.binomial(n_tested, gamma))
            obs.append(ClinicObservation(f"clinic{c}", int(year), n_tested, k))
    return Dataset(obs), traj, effects
