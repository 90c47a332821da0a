"""Laser parameters, their mapping to excitation rates, and the one-atom law.

Angular frequencies are in rad/s throughout.  ``TWO_PI_MHZ`` converts the
customary ``2*pi*MHz`` unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "TWO_PI_MHZ",
    "LaserParams",
    "RateVector",
    "rates_from_rabi",
    "omega_e_for_ratio",
    "check_validity",
    "single_atom_transient",
    "rabi_ratio_update_consistency",
]

TWO_PI_MHZ = 2.0 * math.pi * 1e6


def _positive_vector(name, values, n=None):
    arr = np.atleast_1d(np.asarray(values, dtype=float)).copy()
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional")
    if n is not None and arr.shape[0] != n:
        raise InvalidInputError(f"{name} has length {arr.shape[0]}, expected {n}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise InvalidInputError(f"{name} entries must be positive and finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RateVector:
    """Per-particle activation rates ``nu`` and deactivation rates ``mu`` (1/s)."""

    nu: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        nu = _positive_vector("nu", self.nu)
        mu = _positive_vector("mu", self.mu, n=nu.shape[0])
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def uniform(cls, n_particles, nu, mu=1.0):
        return cls(np.full(n_particles, float(nu)), np.full(n_particles, float(mu)))

    @classmethod
    def from_ratios(cls, rho, mu=1.0):
        rho = np.asarray(rho, dtype=float)
        return cls(rho * mu, np.broadcast_to(np.asarray(mu, dtype=float), rho.shape))

    def __len__(self):
        return self.nu.shape[0]

    @property
    def ratio(self) -> np.ndarray:
        return self.nu / self.mu

    @property
    def log_ratio(self) -> np.ndarray:
        return np.log(self.nu) - np.log(self.mu)

    def scaled(self, c: float) -> "RateVector":
        return RateVector(self.nu * c, self.mu * c)


@dataclass(frozen=True, eq=False)
class LaserParams:
    """Lower/upper Rabi frequencies per particle and the intermediate decay rate."""

    omega_e: np.ndarray
    omega_r: np.ndarray
    gamma: float

    def __post_init__(self):
        oe = _positive_vector("omega_e", self.omega_e)
        orr = _positive_vector("omega_r", np.broadcast_to(self.omega_r, oe.shape))
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidInputError("gamma must be positive and finite")
        object.__setattr__(self, "omega_e", oe)
        object.__setattr__(self, "omega_r", orr)
        object.__setattr__(self, "gamma", float(self.gamma))

    def __len__(self):
        return self.omega_e.shape[0]

    def with_omega_e(self, omega_e) -> "LaserParams":
        return LaserParams(omega_e, self.omega_r, self.gamma)


def rates_from_rabi(params: LaserParams) -> RateVector:
    """Effective ground/Rydberg transition rates for each particle.

    ``mu = 2 g Wr^4 / ((Wr^2 - 2 We^2)^2 + 2 g^2 (We^2 + Wr^2))`` and
    ``nu = (We / Wr)^2 mu``.
    """
    oe2 = params.omega_e**2
    or2 = params.omega_r**2
    g = params.gamma
    mu = 2.0 * g * or2**2 / ((or2 - 2.0 * oe2) ** 2 + 2.0 * g * g * (oe2 + or2))
    return RateVector(oe2 / or2 * mu, mu)


def omega_e_for_ratio(rho, omega_r) -> np.ndarray:
    """Lower Rabi frequency giving activation/deactivation ratio ``rho``."""
    return np.asarray(omega_r, dtype=float) * np.sqrt(np.asarray(rho, dtype=float))


def check_validity(params: LaserParams, factor: float = 5.0) -> list[str]:
    """Warn where the rate-equation regime is not clearly satisfied.

    The reduction to two-level rates needs ``Wr << We`` and ``Wr << gamma``;
    "much smaller" is read as smaller by at least ``factor``.
    """
    if factor < 1:
        raise InvalidInputError("factor must be at least 1")
    warnings = []
    for i, (oe, orr) in enumerate(zip(params.omega_e, params.omega_r), start=1):
        if orr * factor > oe:
            warnings.append(
                f"particle {i}: upper drive not weak against lower drive "
                f"(omega_r * {factor:g} > omega_e)"
            )
        if orr * factor > params.gamma:
            warnings.append(
                f"particle {i}: intermediate decay not fast against upper drive "
                f"(omega_r * {factor:g} > gamma)"
            )
    return warnings


def single_atom_transient(nu, mu, p1_0, t):
    """Excitation probability of an isolated atom after time ``t``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidInputError("time must be non-negative")
    if not 0.0 <= p1_0 <= 1.0:
        raise InvalidInputError("initial probability must lie in [0, 1]")
    p_inf = nu / (nu + mu)
    return p_inf + (p1_0 - p_inf) * np.exp(-(nu + mu) * t)


def rabi_ratio_update_consistency(omega_e, omega_r, a, delta):
    """Rate ratio before and after one multiplicative Rabi-frequency update.

    Scaling ``omega_e`` by ``exp(-a * delta / 2)`` scales ``(omega_e/omega_r)^2``
    by ``exp(-a * delta)``, so updating the amplitude with the half exponent is
    the same as updating the rate ratio with the full one.
    """
    if omega_e <= 0 or omega_r <= 0:
        raise InvalidInputError("Rabi frequencies must be positive")
    before = (omega_e / omega_r) ** 2
    after = (omega_e * math.exp(-0.5 * a * delta) / omega_r) ** 2
    return before, after
