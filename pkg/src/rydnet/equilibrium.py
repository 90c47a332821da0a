"""Exact stationary analysis of the blockade process on an enumerated space.

Stationary weights are products of per-particle rate ratios, so all work is
done with log-weights; a table for 36 particles at ratio 1e6 would otherwise
overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError
from .physics import RateVector
from .statespace import StateSpace

__all__ = [
    "RateVector",
    "EquilibriumTable",
    "stationary_distribution",
    "excitation_probabilities",
    "verify_detailed_balance",
    "stationarity_residual",
    "dominant_limit_gap",
]

BALANCE_EPS = 1e-300


@dataclass(frozen=True, eq=False)
class EquilibriumTable:
    """Stationary law over a :class:`StateSpace`.

    Attributes
    ----------
    log_weights : numpy.ndarray
        Unnormalised log-weights ``sum_i sigma_i log(nu_i / mu_i)``.
    log_z : float
        Log of the normalisation constant.
    pi : numpy.ndarray
        Stationary probability per state.
    theta : numpy.ndarray
        Excitation probability per particle.
    """

    space: StateSpace
    rates: RateVector
    log_weights: np.ndarray
    log_z: float
    pi: np.ndarray
    theta: np.ndarray

    @property
    def z(self) -> float:
        """Normalisation constant (may be ``inf`` where ``log_z`` is huge)."""
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_z))

    @property
    def z_mantissa_exponent(self) -> tuple[float, int]:
        """``Z`` as ``(m, e)`` with ``Z = m * 10**e`` and ``1 <= m < 10``."""
        log10 = self.log_z / np.log(10.0)
        e = int(np.floor(log10))
        return float(10 ** (log10 - e)), e


def _log_weights(space: StateSpace, log_ratio: np.ndarray) -> np.ndarray:
    lw = np.zeros(len(space))
    for i in range(1, space.n_particles + 1):
        if log_ratio[i - 1] != 0.0:
            lw += space.occupancy(i) * log_ratio[i - 1]
    return lw


def stationary_distribution(space: StateSpace, rates: RateVector) -> EquilibriumTable:
    """Product-form stationary distribution ``pi ~ prod_i (nu_i/mu_i)^sigma_i``."""
    if len(rates) != space.n_particles:
        raise InvalidInputError(
            f"rate vector has {len(rates)} entries, space has {space.n_particles} particles"
        )
    lw = _log_weights(space, rates.log_ratio)
    log_z = float(logsumexp(lw))
    pi = np.exp(lw - log_z)
    pi /= pi.sum()
    theta = np.array([pi @ space.occupancy(i) for i in range(1, space.n_particles + 1)])
    for arr in (lw, pi, theta):
        arr.setflags(write=False)
    return EquilibriumTable(space, rates, lw, log_z, pi, theta)


def excitation_probabilities(eq: EquilibriumTable) -> np.ndarray:
    """Probability that each particle is excited, ``theta_i = sum sigma_i pi``."""
    return eq.theta.copy()


def _check_same_space(eq, generator):
    gs = generator.space
    if gs is eq.space:
        return
    if len(gs) != len(eq.space) or not np.array_equal(gs.masks, eq.space.masks):
        raise InvalidInputError("generator and equilibrium table use different state spaces")


def verify_detailed_balance(eq: EquilibriumTable, generator, pi=None) -> float:
    """Largest relative violation of ``pi_s Q_st = pi_t Q_ts`` over state pairs.

    ``pi`` overrides the table's distribution, which lets callers check a
    perturbed vector against the same generator.
    """
    _check_same_space(eq, generator)
    pi = eq.pi if pi is None else np.asarray(pi, dtype=float)
    off = generator.off_diagonal()
    flux = off.multiply(pi[:, None]).tocsr()
    back = flux.T.tocsr()
    pattern = (flux + back).tocoo()
    r, c = pattern.row, pattern.col
    fwd = np.asarray(flux[r, c]).ravel()
    rev = np.asarray(back[r, c]).ravel()
    if fwd.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(fwd, rev), BALANCE_EPS)
    return float(np.max(np.abs(fwd - rev) / denom))


def stationarity_residual(eq: EquilibriumTable, generator) -> float:
    """Max-norm of ``pi Q``."""
    _check_same_space(eq, generator)
    return float(np.max(np.abs(generator.q.T @ eq.pi)))


def dominant_limit_gap(space: StateSpace, rho) -> tuple[float, float]:
    """Distance of the uniform-ratio stationary law from its large-ratio limit.

    Returns the probability mass outside the maximum independent sets and
    ``max |pi_s * |I| - 1|`` over those sets ``I``.
    """
    rho_arr = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho_arr.size not in (1, space.n_particles):
        raise InvalidInputError("rho must be a scalar or one value per particle")
    if not np.all(rho_arr == rho_arr[0]):
        raise InvalidInputError("the dominant limit is defined for uniform ratios only")
    rho0 = float(rho_arr[0])
    if not rho0 > 0:
        raise InvalidInputError("rho must be positive")
    eq = stationary_distribution(space, RateVector.uniform(space.n_particles, rho0, 1.0))
    dominant = space.n_excited == space.n_excited.max()
    off_mass = float(eq.pi[~dominant].sum())
    uniformity = float(np.max(np.abs(eq.pi[dominant] * dominant.sum() - 1.0)))
    return off_mass, uniformity
