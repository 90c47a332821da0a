"""Feasible configurations (independent sets) and dominant configurations.

A configuration is stored as a bitmask: bit ``i`` set means particle ``i + 1``
is excited.  Graphs with up to 64 particles use ``uint64`` masks and compiled
enumeration; larger graphs fall back to Python integers, which act as
arbitrary-width bitsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import CapacityError, InvalidInputError
from .graph import InterferenceGraph

__all__ = [
    "DEFAULT_STATE_CAP",
    "StateSpace",
    "to_mask",
    "from_mask",
    "is_feasible",
    "enumerate_feasible",
    "maximum_independent_sets",
    "checkerboards",
]

DEFAULT_STATE_CAP = 50_000_000
_WORD = 64


def to_mask(config) -> int:
    """Occupancy vector ``(sigma_1, ..., sigma_N)`` to its bitmask."""
    mask = 0
    for i, s in enumerate(config):
        if s not in (0, 1, True, False):
            raise InvalidInputError(f"occupancy entries must be 0 or 1, got {s!r}")
        if s:
            mask |= 1 << i
    return mask


def from_mask(mask: int, n_particles: int) -> np.ndarray:
    mask = int(mask)
    return np.array([(mask >> i) & 1 for i in range(n_particles)], dtype=np.int8)


def is_feasible(config, graph: InterferenceGraph) -> bool:
    """True when no two blocking particles are excited together."""
    config = list(config)
    if len(config) != graph.n_particles:
        raise InvalidInputError(
            f"configuration has length {len(config)}, graph has {graph.n_particles} particles"
        )
    return _mask_feasible(to_mask(config), graph)


def _mask_feasible(mask: int, graph: InterferenceGraph) -> bool:
    m = mask
    while m:
        low = m & -m
        i = low.bit_length() - 1
        if mask & graph.neighbor_masks[i]:
            return False
        m ^= low
    return True


@numba.njit(cache=True)
def _dfs_enumerate(nbr, n, cap):
    # explicit stack; the "off" branch is pushed last so it is popped first,
    # which yields lexicographic order of (sigma_1, ..., sigma_N)
    out = np.empty(1024, dtype=np.uint64)
    count = 0
    pos = np.empty(n + 2, dtype=np.int64)
    cur = np.empty(n + 2, dtype=np.uint64)
    forb = np.empty(n + 2, dtype=np.uint64)
    top = 0
    pos[0] = 0
    cur[0] = np.uint64(0)
    forb[0] = np.uint64(0)
    one = np.uint64(1)
    while top >= 0:
        p = pos[top]
        c = cur[top]
        f = forb[top]
        top -= 1
        if p == n:
            if count >= cap:
                return out[:count], count + 1
            if count == out.shape[0]:
                grown = np.empty(out.shape[0] * 2, dtype=np.uint64)
                grown[:count] = out[:count]
                out = grown
            out[count] = c
            count += 1
            continue
        bit = one << np.uint64(p)
        if (f & bit) == 0:
            top += 1
            pos[top] = p + 1
            cur[top] = c | bit
            forb[top] = f | nbr[p]
        top += 1
        pos[top] = p + 1
        cur[top] = c
        forb[top] = f
    return out[:count], count


@numba.njit(cache=True)
def _dfs_maximum(nbr, n, keep):
    # exhaustive scan that stores only the current best configurations
    best = -1
    found = np.empty(keep, dtype=np.uint64)
    n_found = 0
    scanned = 0
    pos = np.empty(n + 2, dtype=np.int64)
    cur = np.empty(n + 2, dtype=np.uint64)
    forb = np.empty(n + 2, dtype=np.uint64)
    size = np.empty(n + 2, dtype=np.int64)
    top = 0
    pos[0] = 0
    cur[0] = np.uint64(0)
    forb[0] = np.uint64(0)
    size[0] = 0
    one = np.uint64(1)
    while top >= 0:
        p = pos[top]
        c = cur[top]
        f = forb[top]
        s = size[top]
        top -= 1
        if p == n:
            scanned += 1
            if s > best:
                best = s
                n_found = 0
            if s == best:
                if n_found < keep:
                    found[n_found] = c
                n_found += 1
            continue
        bit = one << np.uint64(p)
        if (f & bit) == 0:
            top += 1
            pos[top] = p + 1
            cur[top] = c | bit
            forb[top] = f | nbr[p]
            size[top] = s + 1
        top += 1
        pos[top] = p + 1
        cur[top] = c
        forb[top] = f
        size[top] = s
    return found[: min(n_found, keep)], n_found, best, scanned


def _python_enumerate(graph, cap):
    n = graph.n_particles
    nbr = graph.neighbor_masks
    out = []
    stack = [(0, 0, 0)]
    while stack:
        p, c, f = stack.pop()
        if p == n:
            if len(out) >= cap:
                raise CapacityError(cap, len(out) + 1)
            out.append(c)
            continue
        bit = 1 << p
        if not f & bit:
            stack.append((p + 1, c | bit, f | nbr[p]))
        stack.append((p + 1, c, f))
    return out


def _popcount(masks: np.ndarray) -> np.ndarray:
    if masks.dtype == object:
        return np.array([int(m).bit_count() for m in masks], dtype=np.int64)
    return np.bitwise_count(masks).astype(np.int64)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Complete, lexicographically ordered list of feasible configurations.

    ``masks[k]`` is the bitmask of state ``k``.  The all-ground state is
    always index 0.
    """

    graph: InterferenceGraph
    masks: np.ndarray
    n_excited: np.ndarray = field(init=False, repr=False)
    _lookup: object = field(init=False, repr=False)

    def __post_init__(self):
        self.masks.setflags(write=False)
        counts = _popcount(self.masks)
        counts.setflags(write=False)
        object.__setattr__(self, "n_excited", counts)
        if self.masks.dtype == object:
            lookup = {int(m): k for k, m in enumerate(self.masks)}
        else:
            order = np.argsort(self.masks, kind="stable")
            lookup = (self.masks[order], order)
        object.__setattr__(self, "_lookup", lookup)

    def __len__(self) -> int:
        return self.masks.shape[0]

    @property
    def n_particles(self) -> int:
        return self.graph.n_particles

    @property
    def wide(self) -> bool:
        """True when masks are Python integers (more than 64 particles)."""
        return self.masks.dtype == object

    def occupancy(self, i: int) -> np.ndarray:
        """0/1 vector over states telling whether particle ``i`` (1-based) is excited."""
        self.graph._check_index(i)
        if self.wide:
            return np.array([(int(m) >> (i - 1)) & 1 for m in self.masks], dtype=np.int8)
        return ((self.masks >> np.uint64(i - 1)) & np.uint64(1)).astype(np.int8)

    def occupancy_matrix(self) -> np.ndarray:
        """Dense ``(|S|, N)`` 0/1 matrix; only sensible for small spaces."""
        return np.stack([self.occupancy(i) for i in range(1, self.n_particles + 1)], axis=1)

    def config(self, k: int) -> np.ndarray:
        return from_mask(self.masks[k], self.n_particles)

    def index_of_mask(self, mask) -> int:
        """Position of the state with bitmask ``mask``; ``-1`` when absent."""
        if self.wide:
            return self._lookup.get(int(mask), -1)
        sorted_masks, order = self._lookup
        m = np.uint64(mask)
        k = int(np.searchsorted(sorted_masks, m))
        if k < len(sorted_masks) and sorted_masks[k] == m:
            return int(order[k])
        return -1

    def indices_of_masks(self, masks: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`index_of_mask` for narrow spaces."""
        if self.wide:
            return np.array([self.index_of_mask(m) for m in masks], dtype=np.int64)
        sorted_masks, order = self._lookup
        k = np.searchsorted(sorted_masks, masks)
        k_clip = np.minimum(k, len(sorted_masks) - 1)
        hit = sorted_masks[k_clip] == masks
        return np.where(hit, order[k_clip], -1)

    def index(self, config) -> int:
        """Position of ``config`` (an occupancy vector) in the state list."""
        config = list(config)
        if len(config) != self.n_particles:
            raise InvalidInputError("configuration length does not match the graph")
        k = self.index_of_mask(to_mask(config))
        if k < 0:
            raise InvalidInputError("configuration is not feasible")
        return k


def _narrow_masks(graph):
    return np.array([np.uint64(m) for m in graph.neighbor_masks], dtype=np.uint64)


def enumerate_feasible(graph: InterferenceGraph, cap: int = DEFAULT_STATE_CAP) -> StateSpace:
    """Enumerate every independent set of ``graph``, the empty set included.

    Raises
    ------
    CapacityError
        If more than ``cap`` states exist.
    """
    if graph.n_particles <= _WORD:
        masks, count = _dfs_enumerate(_narrow_masks(graph), graph.n_particles, cap)
        if count > cap:
            raise CapacityError(cap, count)
        return StateSpace(graph, masks.copy())
    found = _python_enumerate(graph, cap)
    masks = np.empty(len(found), dtype=object)
    masks[:] = found
    return StateSpace(graph, masks)


def maximum_independent_sets(source, keep: int = 1_000_000) -> list[np.ndarray]:
    """All feasible configurations of maximum occupancy.

    ``source`` is either a complete :class:`StateSpace` or an
    :class:`InterferenceGraph`.  Given a graph with at most 64 particles the
    scan runs over every independent set without storing them, so spaces far
    beyond the enumeration budget (the 9x5 lattice has about 2.5e8 states)
    can still be searched exhaustively.
    """
    if isinstance(source, StateSpace):
        top = source.n_excited.max()
        ks = np.flatnonzero(source.n_excited == top)
        return [source.config(k) for k in ks]
    graph = source
    if graph.n_particles > _WORD:
        space = enumerate_feasible(graph)
        return maximum_independent_sets(space)
    found, n_found, _, _ = _dfs_maximum(_narrow_masks(graph), graph.n_particles, keep)
    if n_found > keep:
        raise CapacityError(keep, n_found, what="maximum independent sets")
    return [from_mask(m, graph.n_particles) for m in found]


def checkerboards(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Even and odd checkerboard occupancies of an ``n x m`` lattice.

    The even board excites sites with ``(row + col) % 2 == 0``.
    """
    parity = np.add.outer(np.arange(n), np.arange(m)).ravel() % 2
    return (parity == 0).astype(np.int8), (parity == 1).astype(np.int8)
