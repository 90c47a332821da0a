"""Interference graphs: which particles block each other.

Particles are numbered ``1..N`` at every public entry point.  Internally
neighbour lists are zero-based, which is what the simulation kernels use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "InterferenceGraph",
    "build_unit_disk",
    "from_edges",
    "lattice_graph",
    "line_graph",
    "blocking_count",
    "read_graph",
    "write_graph",
]


@dataclass(frozen=True, eq=False)
class InterferenceGraph:
    """Immutable blockade graph over ``n_particles`` particles.

    Attributes
    ----------
    n_particles : int
        Number of particles ``N``.
    neighbors : tuple of tuple of int
        Zero-based sorted neighbour lists.
    positions : numpy.ndarray or None
        ``(N, 3)`` read-only coordinates when the graph came from geometry.
    radius : float or None
        Blockade radius used to build the graph, if any.
    """

    n_particles: int
    neighbors: tuple[tuple[int, ...], ...]
    positions: np.ndarray | None = None
    radius: float | None = None
    _masks: tuple[int, ...] = field(init=False, repr=False)
    _csr: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_particles < 1:
            raise InvalidInputError("a graph needs at least one particle")
        if len(self.neighbors) != self.n_particles:
            raise InvalidInputError("neighbour list length differs from n_particles")
        for i, nbrs in enumerate(self.neighbors):
            for j in nbrs:
                if j == i:
                    raise InvalidInputError(f"self-loop at particle {i + 1}")
                if i not in self.neighbors[j]:
                    raise InvalidInputError(f"asymmetric edge ({i + 1}, {j + 1})")
        masks = tuple(sum(1 << j for j in nbrs) for nbrs in self.neighbors)
        ptr = np.zeros(self.n_particles + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(n) for n in self.neighbors])
        idx = np.fromiter(
            (j for nbrs in self.neighbors for j in nbrs), dtype=np.int64, count=int(ptr[-1])
        )
        ptr.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "_masks", masks)
        object.__setattr__(self, "_csr", (ptr, idx))

    @property
    def neighbor_masks(self) -> tuple[int, ...]:
        """Bitmask of neighbours per particle (bit ``j`` is particle ``j + 1``)."""
        return self._masks

    @property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """``(indptr, indices)`` zero-based adjacency in compressed form."""
        return self._csr

    @property
    def n_edges(self) -> int:
        return int(self._csr[0][-1]) // 2

    def edges(self) -> list[tuple[int, int]]:
        """Sorted list of 1-based edges ``(i, j)`` with ``i < j``."""
        return [
            (i + 1, j + 1) for i, nbrs in enumerate(self.neighbors) for j in nbrs if i < j
        ]

    def degree(self, i: int) -> int:
        self._check_index(i)
        return len(self.neighbors[i - 1])

    def blocks(self, i: int, j: int) -> bool:
        self._check_index(i)
        self._check_index(j)
        return (j - 1) in self.neighbors[i - 1]

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.n_particles, self.n_particles), dtype=bool)
        for i, nbrs in enumerate(self.neighbors):
            a[i, list(nbrs)] = True
        return a

    def _check_index(self, i):
        if not 1 <= i <= self.n_particles:
            raise InvalidInputError(f"particle index {i} outside 1..{self.n_particles}")


def _from_adjacency_sets(n, adj, positions=None, radius=None):
    if positions is not None:
        positions = np.array(positions, dtype=float)
        positions.setflags(write=False)
    return InterferenceGraph(
        n_particles=n,
        neighbors=tuple(tuple(sorted(s)) for s in adj),
        positions=positions,
        radius=radius,
    )


def build_unit_disk(positions, radius: float) -> InterferenceGraph:
    """Block every pair of particles at distance ``<= radius``.

    A pair exactly at the blockade radius is blocked; co-excitation needs a
    strictly larger separation.

    Parameters
    ----------
    positions : array_like, shape (N, d)
        Particle coordinates with ``d <= 3``; missing axes are zero-filled.
    radius : float
        Blockade radius, same length unit as ``positions``.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    if pos.ndim != 2 or pos.shape[0] == 0:
        raise InvalidInputError("positions must be a non-empty (N, d) array")
    if pos.shape[1] > 3:
        raise InvalidInputError("positions have more than three coordinates")
    if pos.shape[1] < 3:
        pos = np.hstack([pos, np.zeros((pos.shape[0], 3 - pos.shape[1]))])
    if not np.all(np.isfinite(pos)):
        raise InvalidInputError("positions contain non-finite coordinates")
    if not (math.isfinite(radius) and radius > 0):
        raise InvalidInputError(f"radius must be positive and finite, got {radius}")

    n = pos.shape[0]
    # compare squared distances so integer grids stay exact at d == R
    diff = pos[:, None, :] - pos[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    close = d2 <= radius * radius
    np.fill_diagonal(close, False)
    adj = [set(np.flatnonzero(close[i]).tolist()) for i in range(n)]
    return _from_adjacency_sets(n, adj, positions=pos, radius=float(radius))


def from_edges(n_particles: int, edges) -> InterferenceGraph:
    """Build a graph from explicit 1-based edges."""
    if n_particles < 1:
        raise InvalidInputError("a graph needs at least one particle")
    adj = [set() for _ in range(n_particles)]
    for i, j in edges:
        if not (1 <= i <= n_particles and 1 <= j <= n_particles):
            raise InvalidInputError(f"edge ({i}, {j}) references a missing particle")
        if i == j:
            raise InvalidInputError(f"self-loop at particle {i}")
        adj[i - 1].add(j - 1)
        adj[j - 1].add(i - 1)
    return _from_adjacency_sets(n_particles, adj)


def lattice_graph(n: int, m: int) -> InterferenceGraph:
    """``n x m`` grid with nearest-neighbour blocking and unit spacing.

    Particle ``(r, c)`` (zero-based row ``r < n``, column ``c < m``) is number
    ``r * m + c + 1`` and sits at ``(r, c, 0)``.
    """
    if n < 1 or m < 1:
        raise InvalidInputError(f"lattice dimensions must be positive, got {n}x{m}")
    adj = [set() for _ in range(n * m)]
    for r in range(n):
        for c in range(m):
            k = r * m + c
            if c + 1 < m:
                adj[k].add(k + 1)
                adj[k + 1].add(k)
            if r + 1 < n:
                adj[k].add(k + m)
                adj[k + m].add(k)
    positions = [(r, c, 0.0) for r in range(n) for c in range(m)]
    return _from_adjacency_sets(n * m, adj, positions=positions, radius=1.0)


def line_graph(n_particles: int, b: int) -> InterferenceGraph:
    """Particles on a line, each blocking the ``b`` nearest on either side."""
    if n_particles < 1:
        raise InvalidInputError("a line needs at least one particle")
    if b < 0:
        raise InvalidInputError(f"blocking range must be non-negative, got {b}")
    adj = [
        {j for j in range(max(0, i - b), min(n_particles, i + b + 1)) if j != i}
        for i in range(n_particles)
    ]
    positions = [(float(i), 0.0, 0.0) for i in range(n_particles)]
    return _from_adjacency_sets(
        n_particles, adj, positions=positions, radius=float(b) if b > 0 else None
    )


def blocking_count(n_particles: int, b: int, i: int) -> int:
    """Number of other particles that particle ``i`` blocks on a line graph.

    ``w(i) = min(i + b, N) - max(1, i - b)`` with 1-based ``i``.
    """
    if b < 0:
        raise InvalidInputError(f"blocking range must be non-negative, got {b}")
    if not 1 <= i <= n_particles:
        raise InvalidInputError(f"particle index {i} outside 1..{n_particles}")
    return min(i + b, n_particles) - max(1, i - b)


def write_graph(graph: InterferenceGraph, path) -> None:
    """Write ``graph`` in the plain-text graph format.

    Geometric graphs are written as ``N R`` followed by one ``x y z`` line per
    particle.  Graphs without geometry get ``N -`` and an ``edges`` section.
    """
    lines = []
    if graph.positions is not None and graph.radius is not None:
        lines.append(f"{graph.n_particles} {graph.radius!r}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in graph.positions)
    else:
        lines.append(f"{graph.n_particles} -")
        lines.append("edges")
        lines.extend(f"{i} {j}" for i, j in graph.edges())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_graph(path) -> InterferenceGraph:
    """Parse the plain-text graph format; ``#`` starts a comment."""
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            rows.append((lineno, body.split()))
    if not rows:
        raise InvalidInputError(f"{path}: empty graph file")

    lineno, header = rows[0]
    try:
        n = int(header[0])
        radius = None if len(header) < 2 or header[1] == "-" else float(header[1])
    except (ValueError, IndexError):
        raise InvalidInputError(f"{path}:{lineno}: header must be 'N R' or 'N -'") from None

    body = rows[1:]
    if body and body[0][1] == ["edges"]:
        edges = []
        for lineno, toks in body[1:]:
            try:
                i, j = (int(t) for t in toks)
            except ValueError:
                raise InvalidInputError(f"{path}:{lineno}: expected 'i j'") from None
            edges.append((i, j))
        return from_edges(n, edges)

    if radius is None:
        raise InvalidInputError(f"{path}:{lineno}: position format needs a radius")
    if len(body) != n:
        raise InvalidInputError(f"{path}: expected {n} position lines, found {len(body)}")
    positions = []
    for lineno, toks in body:
        try:
            xyz = [float(t) for t in toks]
        except ValueError:
            raise InvalidInputError(f"{path}:{lineno}: bad coordinate") from None
        if not 1 <= len(xyz) <= 3:
            raise InvalidInputError(f"{path}:{lineno}: expected 'x y z'")
        positions.append(xyz + [0.0] * (3 - len(xyz)))
    return build_unit_disk(positions, radius)
