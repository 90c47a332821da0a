"""Tuning per-particle Rabi frequencies to hit target excitation probabilities.

The update acts multiplicatively on the lower Rabi frequency,

    omega_e <- omega_e * exp(-a/2 * (theta_hat - target)),

so the activation/deactivation ratio moves by ``exp(-a * (theta_hat - target))``
and frequencies stay positive.  ``theta_hat`` comes either from the exact
stationary law (:func:`tune_exact`) or from simulation
(:func:`tune_stochastic`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .dynamics import estimate_ensemble, rng_stream, run_occupancy
from .equilibrium import stationary_distribution
from .errors import CapacityError, InfeasibleTargetError, InvalidInputError, SolverError
from .graph import InterferenceGraph, blocking_count
from .physics import LaserParams, RateVector, rates_from_rabi
from .statespace import DEFAULT_STATE_CAP, StateSpace, enumerate_feasible

__all__ = [
    "Constant",
    "PowerLaw",
    "ShiftedRoot",
    "Schedule",
    "reference_schedule",
    "parse_family",
    "IterationRecord",
    "TunerState",
    "initial_state",
    "tune_step",
    "tune_exact",
    "tune_stochastic",
    "line_analytic_solution",
    "Achievability",
    "check_achievable",
    "validate_schedule",
]

EXACT_TOL = 1e-6
ESTIMATORS = ("ensemble", "time_average")


# --------------------------------------------------------------------------
# schedule families


@dataclass(frozen=True)
class Constant:
    value: float

    exponent = 0.0

    def __call__(self, n):
        return self.value

    def describe(self):
        return f"constant {self.value!r}"


@dataclass(frozen=True)
class PowerLaw:
    """``c * n**exponent``."""

    c: float
    exponent: float

    def __call__(self, n):
        return self.c * n**self.exponent

    def describe(self):
        return f"power {self.c!r} {self.exponent!r}"


@dataclass(frozen=True)
class ShiftedRoot:
    """``c / (d + sqrt(n))``, asymptotically ``c * n**-0.5``."""

    c: float
    d: float

    exponent = -0.5

    def __call__(self, n):
        return self.c / (self.d + math.sqrt(n))

    def describe(self):
        return f"shifted_root {self.c!r} {self.d!r}"


_FAMILIES = {"constant": (Constant, 1), "power": (PowerLaw, 2), "shifted_root": (ShiftedRoot, 2)}


def parse_family(text: str):
    """Parse ``"power 25 2"``-style family descriptions."""
    toks = text.split()
    if not toks or toks[0] not in _FAMILIES:
        raise InvalidInputError(
            f"unknown schedule family {text!r}; expected one of {sorted(_FAMILIES)}"
        )
    cls, n_args = _FAMILIES[toks[0]]
    if len(toks) != n_args + 1:
        raise InvalidInputError(f"{toks[0]} takes {n_args} parameter(s), got {text!r}")
    try:
        args = [float(t) for t in toks[1:]]
    except ValueError:
        raise InvalidInputError(f"non-numeric schedule parameter in {text!r}") from None
    return cls(*args)


@dataclass(frozen=True)
class Schedule:
    """Step sizes ``a(n)``, sample horizons ``T(n)`` and sample counts ``m(n)``.

    Each entry is a family object from this module or any callable ``n -> value``.
    Sample counts are rounded up to an integer.
    """

    step_size: Callable[[int], float]
    sample_horizon: Callable[[int], float] = Constant(1.0)
    sample_count: Callable[[int], float] = Constant(1)
    max_iterations: int = 100

    def a(self, n: int) -> float:
        value = float(self.step_size(n))
        if value < 0 or not math.isfinite(value):
            raise InvalidInputError(f"step size at n={n} is {value}")
        return value

    def T(self, n: int) -> float:
        value = float(self.sample_horizon(n))
        if not value > 0:
            raise InvalidInputError(f"sample horizon at n={n} is {value}")
        return value

    def m(self, n: int) -> int:
        return max(1, math.ceil(float(self.sample_count(n)) - 1e-9))

    def describe(self) -> dict:
        def d(f):
            return f.describe() if hasattr(f, "describe") else repr(f)

        return {
            "a": d(self.step_size),
            "T": d(self.sample_horizon),
            "m": d(self.sample_count),
            "max_iterations": self.max_iterations,
        }


def reference_schedule(max_iterations: int = 10) -> Schedule:
    """``a(n) = 100 / (10 + sqrt n)``, ``T(n) = 250 us``, ``m(n) = 25 n^2``."""
    return Schedule(ShiftedRoot(100.0, 10.0), Constant(250e-6), PowerLaw(25.0, 2.0), max_iterations)


def validate_schedule(schedule: Schedule, estimator: str = "ensemble") -> list[str]:
    """Check the usual step-size conditions for convergence.

    With ``a(n) ~ n**-p`` and estimation effort growing like ``n**q`` the
    conditions ``sum a = inf``, ``sum a^2 < inf`` and ``sum a / effort < inf``
    reduce to ``p <= 1``, ``p > 1/2`` and ``p + q > 1``.  Effort is the
    averaging window ``T(n)`` for the time-average estimator and the sample
    count ``m(n)`` for the ensemble estimator.
    """
    warnings = []
    a = schedule.step_size
    effort = schedule.sample_horizon if estimator == "time_average" else schedule.sample_count
    if not hasattr(a, "exponent"):
        return ["step-size schedule is a custom function; convergence conditions not checked"]
    if isinstance(a, Constant) and a.value == 0:
        return ["step size is identically zero; iterates never move"]
    p = -a.exponent
    if p > 1:
        warnings.append(f"sum of a(n) converges ({a.describe()}); iterates may stall")
    if p <= 0.5:
        warnings.append(f"sum of a(n)^2 diverges ({a.describe()})")
    if not hasattr(effort, "exponent"):
        warnings.append("estimation-effort schedule is a custom function; sum a(n)/effort(n) not checked")
    elif p + effort.exponent <= 1:
        warnings.append(
            f"sum of a(n)/effort(n) diverges ({a.describe()} against {effort.describe()})"
        )
    return warnings


# --------------------------------------------------------------------------
# tuner state and update


@dataclass(frozen=True)
class IterationRecord:
    n: int
    omega_e: np.ndarray
    theta_hat: np.ndarray
    a: float


@dataclass(frozen=True, eq=False)
class TunerState:
    """Iterate of the tuner.

    ``history[k]`` records the estimate and step used to go from iterate
    ``k`` to ``k + 1`` together with the resulting ``omega_e``.
    """

    omega_e: np.ndarray
    omega_r: np.ndarray
    gamma: float
    targets: np.ndarray
    iteration: int = 0
    history: tuple[IterationRecord, ...] = ()
    initial_omega_e: np.ndarray | None = None
    clamp: tuple[float, float] | None = None
    converged: bool | None = None
    metric: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def params(self) -> LaserParams:
        return LaserParams(self.omega_e, self.omega_r, self.gamma)

    @property
    def rates(self) -> RateVector:
        return rates_from_rabi(self.params)

    @property
    def ratio(self) -> np.ndarray:
        return (self.omega_e / self.omega_r) ** 2

    def omega_e_at(self, n: int) -> np.ndarray:
        """Iterate ``n`` (``0`` is the starting point)."""
        if n == 0:
            return self.initial_omega_e
        return self.history[n - 1].omega_e


def _check_targets(targets, n):
    phi = np.broadcast_to(np.asarray(targets, dtype=float), (n,)).copy()
    if np.any(phi <= 0) or np.any(phi >= 1):
        raise InvalidInputError("targets must lie strictly between 0 and 1")
    return phi


def initial_state(n_particles, omega_r, gamma, targets, omega_e0=None, clamp=None) -> TunerState:
    """Starting iterate; ``omega_e`` defaults to ``omega_r`` (ratio one)."""
    omega_r = np.broadcast_to(np.asarray(omega_r, dtype=float), (n_particles,)).copy()
    omega_e = omega_r.copy() if omega_e0 is None else np.broadcast_to(
        np.asarray(omega_e0, dtype=float), (n_particles,)
    ).copy()
    LaserParams(omega_e, omega_r, gamma)  # validates
    phi = _check_targets(targets, n_particles)
    return TunerState(
        omega_e=omega_e,
        omega_r=omega_r,
        gamma=float(gamma),
        targets=phi,
        initial_omega_e=omega_e.copy(),
        clamp=clamp,
    )


def tune_step(state: TunerState, theta_hat, a: float) -> TunerState:
    """One multiplicative update of every particle's lower Rabi frequency."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_hat.shape != state.omega_e.shape:
        raise InvalidInputError(
            f"estimate has shape {theta_hat.shape}, expected {state.omega_e.shape}"
        )
    if np.any(theta_hat < 0) or np.any(theta_hat > 1):
        raise InvalidInputError("estimates must lie in [0, 1]")
    if a < 0:
        raise InvalidInputError("step size must be non-negative")
    omega_e = state.omega_e * np.exp(-0.5 * a * (theta_hat - state.targets))
    if state.clamp is not None:
        omega_e = np.clip(omega_e, *state.clamp)
    n = state.iteration + 1
    record = IterationRecord(n, omega_e.copy(), theta_hat.copy(), float(a))
    return replace(state, omega_e=omega_e, iteration=n, history=state.history + (record,))


def tune_exact(
    graph: InterferenceGraph,
    omega_r,
    gamma: float,
    targets,
    schedule: Schedule,
    omega_e0=None,
    tol: float = EXACT_TOL,
    clamp=None,
    cap: int = DEFAULT_STATE_CAP,
) -> TunerState:
    """Run the update with exact excitation probabilities in place of estimates.

    Stops once ``max |theta - target| <= tol`` or after
    ``schedule.max_iterations`` updates; ``converged`` and ``metric`` on the
    returned state say which.
    """
    space = enumerate_feasible(graph, cap=cap)
    state = initial_state(graph.n_particles, omega_r, gamma, targets, omega_e0, clamp)

    def theta(st):
        return stationary_distribution(space, RateVector.from_ratios(st.ratio)).theta

    th = theta(state)
    for n in range(1, schedule.max_iterations + 1):
        if np.max(np.abs(th - state.targets)) <= tol:
            break
        state = tune_step(state, th, schedule.a(n))
        th = theta(state)
    metric = float(np.max(np.abs(th - state.targets)))
    return replace(state, converged=metric <= tol, metric=metric, info={"theta": th})


def tune_stochastic(
    graph: InterferenceGraph,
    omega_r,
    gamma: float,
    targets,
    schedule: Schedule,
    estimator: str = "ensemble",
    seed: int = 0,
    omega_e0=None,
    clamp=None,
    threads=None,
    exact_check: bool = True,
    callback=None,
) -> TunerState:
    """Run the update with simulated estimates.

    ``"ensemble"`` restarts the process ``m(n)`` times from all-ground and
    records which particles are excited at ``T(n)``; streams are keyed by
    ``(seed, n, sample)``.  ``"time_average"`` runs one continuing process and
    uses the fraction of each slot of length ``T(n)`` a particle spent
    excited; slot ``n`` draws from stream ``(seed, n)``.

    When ``exact_check`` is set and the graph is small enough to enumerate,
    ``metric`` is the exact ``max |theta - target|`` at the final iterate.
    """
    if estimator not in ESTIMATORS:
        raise InvalidInputError(f"estimator must be one of {ESTIMATORS}")
    state = initial_state(graph.n_particles, omega_r, gamma, targets, omega_e0, clamp)
    occ = np.zeros(graph.n_particles, dtype=np.int8)
    for n in range(1, schedule.max_iterations + 1):
        rates = state.rates
        if estimator == "ensemble":
            theta_hat = estimate_ensemble(
                graph, rates, schedule.m(n), schedule.T(n), seed, keys=(n,), threads=threads
            )
        else:
            length = schedule.T(n)
            theta_hat = run_occupancy(graph, rates, occ, length, rng_stream(seed, n)) / length
        state = tune_step(state, theta_hat, schedule.a(n))
        if callback is not None:
            callback(state)

    metric = None
    info = {}
    if exact_check:
        try:
            space = enumerate_feasible(graph, cap=1_000_000)
        except CapacityError:
            space = None
        if space is not None:
            th = stationary_distribution(space, RateVector.from_ratios(state.ratio)).theta
            metric = float(np.max(np.abs(th - state.targets)))
            info["theta"] = th
    return replace(state, metric=metric, info=info)


# --------------------------------------------------------------------------
# closed-form line solution


def line_analytic_solution(n_particles: int, b: int, phi: float, omega_r) -> np.ndarray:
    """Lower Rabi frequencies giving every particle on a ``b``-blocking line
    the same excitation probability ``phi``.

    ``(We_i / Wr_i)^2 = phi/(1-(1+b)phi) * ((1-b phi)/(1-(1+b)phi))^(w(i)-w(1))``
    where ``w(i)`` is the number of particles that ``i`` blocks.
    """
    if not 0 <= b < n_particles:
        raise InvalidInputError(
            f"the closed form needs 0 <= b < N (got b={b}, N={n_particles})"
        )
    if not 0 < phi < 1:
        raise InvalidInputError("phi must lie in (0, 1)")
    denom = 1.0 - (1 + b) * phi
    if denom <= 0:
        raise InfeasibleTargetError(
            f"target {phi} is not attainable with blocking range {b}: need phi < {1 / (1 + b):.6g}"
        )
    w = np.array([blocking_count(n_particles, b, i) for i in range(1, n_particles + 1)])
    base = phi / denom
    growth = (1.0 - b * phi) / denom
    ratio = base * growth ** (w - w[0])
    return np.broadcast_to(np.asarray(omega_r, dtype=float), (n_particles,)) * np.sqrt(ratio)


# --------------------------------------------------------------------------
# achievable region


@dataclass(frozen=True, eq=False)
class Achievability:
    achievable: bool
    witness: np.ndarray | None
    residual: float | None
    margin: float

    def __bool__(self):
        return self.achievable


def check_achievable(space: StateSpace, phi, margin: float | None = None) -> Achievability:
    """Is ``phi`` a strictly positive convex combination of feasible states?

    Solved as the linear feasibility problem ``sum alpha_s s = phi``,
    ``sum alpha_s = 1``, ``alpha_s >= margin`` with ``margin = 1e-9 / |S|``
    by default.  Targets on the hull boundary are therefore reported as not
    achievable.

    Raises
    ------
    SolverError
        If the LP solver fails for reasons other than infeasibility.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (space.n_particles,):
        raise InvalidInputError("phi must have one entry per particle")
    if np.any(phi <= 0) or np.any(phi >= 1):
        raise InvalidInputError("phi must lie in (0, 1)^N")
    n_states = len(space)
    if margin is None:
        margin = 1e-9 / n_states
    occupancy = space.occupancy_matrix().T.astype(float)
    a_eq = np.vstack([occupancy, np.ones((1, n_states))])
    b_eq = np.concatenate([phi, [1.0]])
    res = linprog(
        np.zeros(n_states),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(margin, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        return Achievability(False, None, None, margin)
    if res.status != 0:
        raise SolverError(f"feasibility LP failed (status {res.status}): {res.message}")
    alpha = np.maximum(res.x, margin)
    residual = float(np.max(np.abs(a_eq @ alpha - b_eq)))
    return Achievability(True, alpha, residual, margin)
