"""Input parameter priors and direct output constraints.

The four inputs are independent a priori: r uniform on [0, r_max], t0
discrete uniform on the integer years t0_min..t0_max, f0 uniform on [0, 1],
and phi constructed by drawing the recruited fraction f uniformly and
inverting the recruitment curve at a fixed chi, which makes phi logistic
with location -logit(f0)/chi and scale 1/chi.

Output constraints are hard prevalence bounds in single years (the limiting
form of logarithmic pooling); a draw either satisfies all of them or gets
zero prior weight.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from .model import EppParams

__all__ = [
    "InputPriorConfig",
    "OutputConstraint",
    "ParamDraws",
    "constraint_indicator",
    "phi_from_fractions",
    "sample_inputs",
]

# Component indices of the per-parameter RNG substreams; draw i of each
# component depends only on (seed, component, i), so sequences are stable
# prefixes under changes of n and of evaluation order.
_STREAM_R = 0
_STREAM_F0 = 1
_STREAM_T0 = 2
_STREAM_PHI = 3

# logit argument clamp: keeps phi finite even if a uniform draw lands exactly
# on 0 (probability ~2^-53 per draw)
_OPEN_EPS = 2.0**-53


@dataclass(frozen=True)
class InputPriorConfig:
    r_max: float = 15.0
    t0_min: int = 1970
    t0_max: int = 1990
    chi_prior: float = 0.1

    def __post_init__(self):
        if not self.r_max > 0.0:
            raise ValueError(f"r_max must be > 0, got {self.r_max}")
        if self.t0_min > self.t0_max:
            raise ValueError(
                f"t0_min must be <= t0_max, got {self.t0_min} > {self.t0_max}"
            )
        if not self.chi_prior > 0.0:
            raise ValueError(f"chi_prior must be > 0, got {self.chi_prior}")


@dataclass(frozen=True)
class OutputConstraint:
    """Hard bounds on prevalence in one calendar year: lower <= rho <= upper."""

    year: int
    lower: float
    upper: float

    def __post_init__(self):
        if not 0.0 <= self.lower < self.upper <= 1.0:
            raise ValueError(
                f"constraint bounds must satisfy 0 <= lower < upper <= 1, "
                f"got [{self.lower}, {self.upper}]"
            )


@dataclass(frozen=True)
class ParamDraws:
    """Struct-of-arrays container for n input parameter draws."""

    r: np.ndarray
    f0: np.ndarray
    t0: np.ndarray
    phi: np.ndarray

    def __len__(self):
        return self.r.shape[0]

    def __getitem__(self, i):
        return EppParams(
            r=float(self.r[i]),
            f0=float(self.f0[i]),
            t0=float(self.t0[i]),
            phi=float(self.phi[i]),
        )


def phi_from_fractions(f, f0, chi_prior):
    """Behavioural response phi that recruits fraction f at deviation chi.

    Inverts the recruitment curve: phi = (logit(f) - logit(f0)) / chi.
    Boundary fractions would give infinite phi and are rejected.
    """
    f = np.asarray(f, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    if not chi_prior > 0.0:
        raise ValueError(f"chi_prior must be > 0, got {chi_prior}")
    if np.any(f <= 0.0) or np.any(f >= 1.0) or np.any(f0 <= 0.0) or np.any(f0 >= 1.0):
        raise ValueError("fractions must lie strictly inside (0, 1)")
    out = (logit(f) - logit(f0)) / chi_prior
    if out.ndim == 0:
        return float(out)
    return out


def _stream(seed, component):
    seq = np.random.SeedSequence(seed, spawn_key=(component,))
    return np.random.Generator(np.random.Philox(seq))


def sample_inputs(cfg, n, seed):
    """Draw n independent parameter vectors, reproducibly for a given seed.

    Each component uses its own counter-based substream, so the first m
    draws are identical for every n >= m.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"need at least one draw, got n={n}")
    r = _stream(seed, _STREAM_R).random(n) * cfg.r_max
    f0 = _stream(seed, _STREAM_F0).random(n)
    n_years = cfg.t0_max - cfg.t0_min + 1
    t0 = cfg.t0_min + np.floor(
        _stream(seed, _STREAM_T0).random(n) * n_years
    ).astype(np.int64)
    u = _stream(seed, _STREAM_PHI).random(n)
    phi = (
        logit(np.clip(u, _OPEN_EPS, 1.0 - _OPEN_EPS))
        - logit(np.clip(f0, _OPEN_EPS, 1.0 - _OPEN_EPS))
    ) / cfg.chi_prior
    return ParamDraws(r=r, f0=f0, t0=t0.astype(float), phi=phi)


def constraint_indicator(traj, constraints):
    """1 if the trajectory satisfies every constraint, else 0."""
    for c in constraints:
        rho = traj.at(c.year)
        if not c.lower <= rho <= c.upper:
            return 0
    return 1
