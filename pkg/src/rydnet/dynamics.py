"""The blockade process itself: generator, transient law and sample paths.

Sample paths are produced with the direct event-driven method.  In a given
configuration every excited particle decays at its ``mu_i`` and every ground
particle with no excited neighbour activates at its ``nu_i``; a blocked
particle carries no clock at all.  The time to the next event is exponential
with the summed rate, and the particle that flips is chosen in proportion to
its rate.  Simulation works on configurations directly, so it never needs the
enumerated state space.

Randomness comes from one ``numpy.random.Generator`` per sample, seeded from
``SeedSequence([seed, *keys, sample_index])``.  Samples can therefore run in
any order on any number of threads and still give identical results.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .errors import CapacityError, InvalidInputError
from .graph import InterferenceGraph
from .physics import RateVector
from .statespace import DEFAULT_STATE_CAP, StateSpace, is_feasible, to_mask

__all__ = [
    "Generator",
    "Trajectory",
    "build_generator",
    "transient_solve",
    "rng_stream",
    "derive_seed",
    "simulate",
    "sample_final_states",
    "estimate_ensemble",
    "estimate_time_average",
    "run_occupancy",
    "time_average_batches",
    "hitting_time",
    "hitting_times",
    "default_hitting_cap",
    "excitation_profile",
]

ODE_RTOL = 1e-9
ODE_ATOL = 1e-12


# --------------------------------------------------------------------------
# generator and master equation


@dataclass(frozen=True, eq=False)
class Generator:
    """Sparse transition-rate matrix ``q`` over an enumerated space (1/s)."""

    space: StateSpace
    rates: RateVector
    q: sp.csr_matrix

    def off_diagonal(self) -> sp.csr_matrix:
        off = self.q.tolil(copy=True)
        off.setdiag(0)
        off = off.tocsr()
        off.eliminate_zeros()
        return off

    def dense(self) -> np.ndarray:
        return self.q.toarray()


def build_generator(
    space: StateSpace, rates: RateVector, cap: int = DEFAULT_STATE_CAP
) -> Generator:
    """Single-flip generator: ``s -> s + e_i`` at ``nu_i`` when feasible and
    ``s -> s - e_i`` at ``mu_i``; diagonal is minus the row sum."""
    if len(space) > cap:
        raise CapacityError(cap, len(space))
    if len(rates) != space.n_particles:
        raise InvalidInputError("rate vector length does not match the state space")
    n_states = len(space)
    rows, cols, vals = [], [], []
    nbr = space.graph.neighbor_masks
    for i in range(space.n_particles):
        if space.wide:
            bit = 1 << i
            up_src = [k for k, m in enumerate(space.masks) if not m & bit and not m & nbr[i]]
            up_dst = [space.index_of_mask(space.masks[k] | bit) for k in up_src]
            down_src = [k for k, m in enumerate(space.masks) if m & bit]
            down_dst = [space.index_of_mask(space.masks[k] ^ bit) for k in down_src]
            up_src, up_dst = np.array(up_src, dtype=np.int64), np.array(up_dst, dtype=np.int64)
            down_src = np.array(down_src, dtype=np.int64)
            down_dst = np.array(down_dst, dtype=np.int64)
        else:
            bit = np.uint64(1) << np.uint64(i)
            masks = space.masks
            has = (masks & bit) != 0
            up_src = np.flatnonzero(~has & ((masks & np.uint64(nbr[i])) == 0))
            up_dst = space.indices_of_masks(masks[up_src] | bit)
            down_src = np.flatnonzero(has)
            down_dst = space.indices_of_masks(masks[down_src] ^ bit)
        if np.any(up_dst < 0) or np.any(down_dst < 0):
            raise InvalidInputError("state space is not closed under single flips")
        rows += [up_src, down_src]
        cols += [up_dst, down_dst]
        vals += [np.full(up_src.size, rates.nu[i]), np.full(down_src.size, rates.mu[i])]
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    out_rate = np.bincount(rows, weights=vals, minlength=n_states)
    idx = np.arange(n_states)
    q = sp.csr_matrix(
        (np.concatenate([vals, -out_rate]), (np.concatenate([rows, idx]), np.concatenate([cols, idx]))),
        shape=(n_states, n_states),
    )
    q.sum_duplicates()
    q.sort_indices()
    return Generator(space, rates, q)


def transient_solve(generator: Generator, p0, t):
    """Distribution at time(s) ``t`` from the forward equation ``dp/dt = p Q``.

    Integrated with an implicit adaptive scheme (Radau) at rtol 1e-9 and
    atol 1e-12.  Each output is clamped at zero and renormalised.  A scalar
    ``t`` returns a vector; an array of times returns one row per time.
    """
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (len(generator.space),):
        raise InvalidInputError("p0 must have one entry per feasible state")
    if np.any(p0 < 0) or not math.isclose(p0.sum(), 1.0, abs_tol=1e-9):
        raise InvalidInputError("p0 must be a probability vector")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise InvalidInputError("times must be finite and non-negative")

    order = np.argsort(times, kind="stable")
    qt = generator.q.T.tocsr()
    out = np.empty((times.size, p0.size))
    t_end = times.max()
    if t_end > 0:
        sol = solve_ivp(
            lambda _t, p: qt @ p,
            (0.0, t_end),
            p0,
            method="Radau",
            t_eval=times[order],
            jac=qt,
            rtol=ODE_RTOL,
            atol=ODE_ATOL,
        )
        if not sol.success:
            raise RuntimeError(f"transient integration failed: {sol.message}")
        out[order] = sol.y.T
    for k, tk in enumerate(times):
        if tk == 0:
            out[k] = p0
        else:
            row = out[k]
            row[row < 0] = 0.0
            out[k] = row / row.sum()
    return out[0] if np.ndim(t) == 0 else out


# --------------------------------------------------------------------------
# compiled event-driven kernels


@numba.njit(nogil=True, cache=True)
def _blocked_counts(ptr, idx, occ):
    n = occ.shape[0]
    blocked = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if occ[i]:
            for k in range(ptr[i], ptr[i + 1]):
                blocked[idx[k]] += 1
    return blocked


@numba.njit(nogil=True, cache=True)
def _total_rate(nu, mu, occ, blocked):
    total = 0.0
    for i in range(occ.shape[0]):
        if occ[i]:
            total += mu[i]
        elif blocked[i] == 0:
            total += nu[i]
    return total


@numba.njit(nogil=True, cache=True)
def _choose(nu, mu, occ, blocked, u):
    acc = 0.0
    last = -1
    for i in range(occ.shape[0]):
        if occ[i]:
            r = mu[i]
        elif blocked[i] == 0:
            r = nu[i]
        else:
            continue
        acc += r
        last = i
        if u < acc:
            return i
    return last


@numba.njit(nogil=True, cache=True)
def _flip(ptr, idx, occ, blocked, i):
    d = 1
    if occ[i]:
        d = -1
        occ[i] = 0
    else:
        occ[i] = 1
    for k in range(ptr[i], ptr[i + 1]):
        blocked[idx[k]] += d
    return d


@numba.njit(nogil=True, cache=True)
def _run_final(ptr, idx, nu, mu, occ, horizon, rng):
    blocked = _blocked_counts(ptr, idx, occ)
    t = 0.0
    n_events = 0
    while True:
        total = _total_rate(nu, mu, occ, blocked)
        t += rng.exponential(1.0) / total
        if t > horizon:
            return n_events
        i = _choose(nu, mu, occ, blocked, rng.random() * total)
        _flip(ptr, idx, occ, blocked, i)
        n_events += 1


@numba.njit(nogil=True, cache=True)
def _run_record(ptr, idx, nu, mu, occ, horizon, rng):
    blocked = _blocked_counts(ptr, idx, occ)
    cap = 1024
    times = np.empty(cap)
    parts = np.empty(cap, dtype=np.int64)
    dirs = np.empty(cap, dtype=np.int8)
    n_events = 0
    t = 0.0
    while True:
        total = _total_rate(nu, mu, occ, blocked)
        t += rng.exponential(1.0) / total
        if t > horizon:
            break
        i = _choose(nu, mu, occ, blocked, rng.random() * total)
        d = _flip(ptr, idx, occ, blocked, i)
        if n_events == cap:
            cap *= 2
            t2 = np.empty(cap)
            p2 = np.empty(cap, dtype=np.int64)
            d2 = np.empty(cap, dtype=np.int8)
            t2[:n_events] = times[:n_events]
            p2[:n_events] = parts[:n_events]
            d2[:n_events] = dirs[:n_events]
            times, parts, dirs = t2, p2, d2
        times[n_events] = t
        parts[n_events] = i
        dirs[n_events] = d
        n_events += 1
    return times[:n_events], parts[:n_events], dirs[:n_events]


@numba.njit(nogil=True, cache=True)
def _run_occupancy(ptr, idx, nu, mu, occ, length, rng, acc):
    # accumulate occupied time per particle over [0, length]
    blocked = _blocked_counts(ptr, idx, occ)
    t = 0.0
    while True:
        total = _total_rate(nu, mu, occ, blocked)
        t_next = t + rng.exponential(1.0) / total
        stop = t_next >= length
        if stop:
            t_next = length
        span = t_next - t
        for j in range(occ.shape[0]):
            if occ[j]:
                acc[j] += span
        if stop:
            return
        t = t_next
        i = _choose(nu, mu, occ, blocked, rng.random() * total)
        _flip(ptr, idx, occ, blocked, i)


@numba.njit(nogil=True, cache=True)
def _run_hitting(ptr, idx, nu, mu, occ, targets, cap, rng):
    blocked = _blocked_counts(ptr, idx, occ)
    n_targets = targets.shape[0]
    mismatch = np.zeros(n_targets, dtype=np.int64)
    for k in range(n_targets):
        for j in range(occ.shape[0]):
            if targets[k, j] != occ[j]:
                mismatch[k] += 1
        if mismatch[k] == 0:
            return 0.0
    t = 0.0
    while True:
        total = _total_rate(nu, mu, occ, blocked)
        t += rng.exponential(1.0) / total
        if t > cap:
            return -1.0
        i = _choose(nu, mu, occ, blocked, rng.random() * total)
        _flip(ptr, idx, occ, blocked, i)
        hit = False
        for k in range(n_targets):
            if targets[k, i] == occ[i]:
                mismatch[k] -= 1
            else:
                mismatch[k] += 1
            if mismatch[k] == 0:
                hit = True
        if hit:
            return t


@numba.njit(nogil=True, cache=True)
def _run_profile(ptr, idx, nu, mu, occ, grid, rng, counts):
    # number of excited particles at each (sorted) grid time
    blocked = _blocked_counts(ptr, idx, occ)
    n_exc = 0
    for j in range(occ.shape[0]):
        n_exc += occ[j]
    g = 0
    t = 0.0
    while g < grid.shape[0]:
        total = _total_rate(nu, mu, occ, blocked)
        t += rng.exponential(1.0) / total
        while g < grid.shape[0] and grid[g] < t:
            counts[g] = n_exc
            g += 1
        if g == grid.shape[0]:
            return
        i = _choose(nu, mu, occ, blocked, rng.random() * total)
        n_exc += _flip(ptr, idx, occ, blocked, i)


# --------------------------------------------------------------------------
# seeding and parallel dispatch


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream labelled ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit seed for the sub-stream ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _resolve_threads(threads):
    if threads is None:
        threads = os.cpu_count() or 1
    return max(1, int(threads))


def _map_samples(work, n_samples, threads):
    """Run ``work(lo, hi)`` over index blocks; blocks write disjoint output."""
    threads = _resolve_threads(threads)
    if threads == 1 or n_samples < 2:
        work(0, n_samples)
        return
    n_blocks = min(n_samples, threads * 4)
    bounds = np.linspace(0, n_samples, n_blocks + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda k: work(bounds[k], bounds[k + 1]), range(n_blocks)))


def _kernel_args(graph: InterferenceGraph, rates: RateVector):
    if len(rates) != graph.n_particles:
        raise InvalidInputError("rate vector length does not match the graph")
    ptr, idx = graph.csr
    return ptr, idx, np.ascontiguousarray(rates.nu), np.ascontiguousarray(rates.mu)


def _initial_occupancy(graph, initial):
    if initial is None:
        return np.zeros(graph.n_particles, dtype=np.int8)
    occ = np.asarray(initial, dtype=np.int8).copy()
    if occ.shape != (graph.n_particles,):
        raise InvalidInputError("initial configuration length does not match the graph")
    if not np.all((occ == 0) | (occ == 1)):
        raise InvalidInputError("initial configuration must be 0/1")
    if not is_feasible(occ.tolist(), graph):
        raise InvalidInputError("initial configuration is not feasible")
    return occ


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One realised sample path.

    ``particles`` are 1-based; ``directions`` hold ``+1`` (excitation) or
    ``-1`` (decay).
    """

    initial: np.ndarray
    times: np.ndarray
    particles: np.ndarray
    directions: np.ndarray
    horizon: float
    seed: int

    def __len__(self):
        return self.times.shape[0]

    @property
    def final(self) -> np.ndarray:
        flips = np.bincount(self.particles - 1, minlength=self.initial.shape[0])
        return (self.initial ^ (flips % 2)).astype(np.int8)

    def configurations(self):
        """Yield ``(time, configuration)`` starting with ``(0, initial)``."""
        occ = self.initial.copy()
        yield 0.0, occ.copy()
        for t, p, d in zip(self.times, self.particles, self.directions):
            occ[p - 1] = 1 if d > 0 else 0
            yield float(t), occ.copy()

    def check(self, graph: InterferenceGraph) -> None:
        """Raise ``AssertionError`` unless the path is well formed on ``graph``."""
        if len(self):
            assert np.all(np.diff(self.times) > 0), "event times not increasing"
            assert 0 < self.times[0] and self.times[-1] <= self.horizon
        occ = self.initial.copy()
        assert is_feasible(occ.tolist(), graph)
        nbr = graph.neighbor_masks
        mask = to_mask(occ.tolist())
        for p, d in zip(self.particles, self.directions):
            bit = 1 << (int(p) - 1)
            if d > 0:
                assert not mask & bit, "excitation of an excited particle"
                assert not mask & nbr[p - 1], f"blocked particle {p} was excited"
                mask |= bit
            else:
                assert mask & bit, "decay of a ground-state particle"
                mask ^= bit


def simulate(
    graph: InterferenceGraph,
    rates: RateVector,
    horizon: float,
    initial=None,
    seed: int = 0,
) -> Trajectory:
    """Exact sample path on ``[0, horizon]`` (all-ground start by default)."""
    if not horizon > 0:
        raise InvalidInputError("horizon must be positive")
    ptr, idx, nu, mu = _kernel_args(graph, rates)
    occ = _initial_occupancy(graph, initial)
    start = occ.copy()
    times, parts, dirs = _run_record(ptr, idx, nu, mu, occ, float(horizon), rng_stream(seed))
    return Trajectory(start, times, parts + 1, dirs, float(horizon), int(seed))


def _occupied_time(traj: Trajectory, w0: float, w1: float) -> np.ndarray:
    n = traj.initial.shape[0]
    acc = np.zeros(n)
    for p in range(n):
        toggles = traj.times[traj.particles == p + 1]
        edges = np.concatenate([[0.0], toggles, [traj.horizon]])
        state = (traj.initial[p] + np.arange(edges.size - 1)) % 2
        lo = np.clip(edges[:-1], w0, w1)
        hi = np.clip(edges[1:], w0, w1)
        acc[p] = np.sum((hi - lo) * state)
    return acc


def estimate_time_average(traj: Trajectory, window_start: float, window_end: float) -> np.ndarray:
    """Fraction of ``[window_start, window_end]`` each particle spent excited."""
    if not 0 <= window_start < window_end <= traj.horizon:
        raise InvalidInputError("window must satisfy 0 <= start < end <= horizon")
    return _occupied_time(traj, window_start, window_end) / (window_end - window_start)


def time_average_batches(
    traj: Trajectory, window_start: float, window_end: float, n_batches: int
) -> np.ndarray:
    """Time averages over ``n_batches`` equal sub-windows, shape ``(n_batches, N)``.

    The spread of the rows gives a batch-means standard error.
    """
    edges = np.linspace(window_start, window_end, n_batches + 1)
    return np.array([estimate_time_average(traj, a, b) for a, b in zip(edges[:-1], edges[1:])])


# --------------------------------------------------------------------------
# ensembles


def sample_final_states(
    graph: InterferenceGraph,
    rates: RateVector,
    sample_count: int,
    sample_horizon: float,
    seed: int,
    keys=(),
    initial=None,
    threads=None,
) -> np.ndarray:
    """Configurations at ``sample_horizon`` of independent restarts, ``(m, N)`` int8."""
    if sample_count < 1:
        raise InvalidInputError("sample_count must be at least 1")
    if not sample_horizon > 0:
        raise InvalidInputError("sample_horizon must be positive")
    ptr, idx, nu, mu = _kernel_args(graph, rates)
    start = _initial_occupancy(graph, initial)
    out = np.empty((sample_count, graph.n_particles), dtype=np.int8)
    horizon = float(sample_horizon)

    def work(lo, hi):
        for s in range(lo, hi):
            occ = start.copy()
            _run_final(ptr, idx, nu, mu, occ, horizon, rng_stream(seed, *keys, s))
            out[s] = occ

    _map_samples(work, sample_count, threads)
    return out


def estimate_ensemble(
    graph: InterferenceGraph,
    rates: RateVector,
    sample_count: int,
    sample_horizon: float,
    seed: int,
    keys=(),
    threads=None,
) -> np.ndarray:
    """Fraction of restarts (from all-ground) with each particle excited at the horizon."""
    states = sample_final_states(
        graph, rates, sample_count, sample_horizon, seed, keys=keys, threads=threads
    )
    return states.mean(axis=0)


def run_occupancy(graph, rates, occ, length, rng) -> np.ndarray:
    """Advance ``occ`` in place for ``length`` and return per-particle occupied time."""
    ptr, idx, nu, mu = _kernel_args(graph, rates)
    acc = np.zeros(graph.n_particles)
    _run_occupancy(ptr, idx, nu, mu, occ, float(length), rng, acc)
    return acc


# --------------------------------------------------------------------------
# hitting times


def default_hitting_cap(rates: RateVector) -> float:
    return 1e4 / float(min(rates.nu.min(), rates.mu.min()))


def _targets_array(graph, targets):
    targets = [np.asarray(t, dtype=np.int8) for t in targets]
    if not targets:
        raise InvalidInputError("at least one target configuration is required")
    for tgt in targets:
        if tgt.shape != (graph.n_particles,):
            raise InvalidInputError("target length does not match the graph")
        if not is_feasible(tgt.tolist(), graph):
            raise InvalidInputError("target configuration is not feasible")
    return np.ascontiguousarray(np.stack(targets))


def hitting_time(
    graph: InterferenceGraph,
    rates: RateVector,
    targets,
    seed: int,
    cap: float | None = None,
    initial=None,
) -> float | None:
    """First time the path equals any target; ``None`` if ``cap`` passes first."""
    tgt = _targets_array(graph, targets)
    cap = default_hitting_cap(rates) if cap is None else float(cap)
    ptr, idx, nu, mu = _kernel_args(graph, rates)
    occ = _initial_occupancy(graph, initial)
    tau = _run_hitting(ptr, idx, nu, mu, occ, tgt, cap, rng_stream(seed))
    return None if tau < 0 else float(tau)


def hitting_times(
    graph: InterferenceGraph,
    rates: RateVector,
    targets,
    n_samples: int,
    seed: int,
    cap: float | None = None,
    initial=None,
    threads=None,
) -> np.ndarray:
    """Independent hitting times; timeouts are ``nan``.

    Sample ``s`` is exactly ``hitting_time(..., seed=derive_seed(seed, s))``.
    """
    tgt = _targets_array(graph, targets)
    cap = default_hitting_cap(rates) if cap is None else float(cap)
    ptr, idx, nu, mu = _kernel_args(graph, rates)
    start = _initial_occupancy(graph, initial)
    out = np.empty(n_samples)

    def work(lo, hi):
        for s in range(lo, hi):
            rng = rng_stream(derive_seed(seed, s))
            tau = _run_hitting(ptr, idx, nu, mu, start.copy(), tgt, cap, rng)
            out[s] = np.nan if tau < 0 else tau

    _map_samples(work, n_samples, threads)
    return out


def excitation_profile(
    graph: InterferenceGraph,
    rates: RateVector,
    grid,
    n_samples: int,
    seed: int,
    initial=None,
    threads=None,
) -> np.ndarray:
    """Mean number of excited particles at each time in ``grid`` over restarts."""
    grid = np.sort(np.asarray(grid, dtype=float))
    ptr, idx, nu, mu = _kernel_args(graph, rates)
    start = _initial_occupancy(graph, initial)
    counts = np.zeros((n_samples, grid.size), dtype=np.int64)

    def work(lo, hi):
        for s in range(lo, hi):
            _run_profile(ptr, idx, nu, mu, start.copy(), grid, rng_stream(seed, s), counts[s])

    _map_samples(work, n_samples, threads)
    return counts.mean(axis=0)
