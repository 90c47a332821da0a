"""Shared brute-force oracles.

These deliberately avoid the package's bitmask enumeration and log-space
arithmetic: feasibility is checked pair by pair over all 2^N vectors and
weights are plain products.
"""

import itertools

import numpy as np
import pytest


def brute_feasible(graph):
    """All feasible 0/1 vectors of ``graph`` by exhaustive filtering."""
    adj = graph.adjacency_matrix()
    n = graph.n_particles
    out = []
    for bits in itertools.product((0, 1), repeat=n):
        on = [i for i in range(n) if bits[i]]
        if all(not adj[i, j] for i, j in itertools.combinations(on, 2)):
            out.append(bits)
    return out


def brute_theta(graph, ratios):
    states = brute_feasible(graph)
    weights = np.array([np.prod([r for r, s in zip(ratios, st) if s]) for st in states])
    occ = np.array(states, dtype=float)
    return weights @ occ / weights.sum()


def brute_generator(states, nu, mu):
    """Dense generator from single-flip rules over an explicit state list."""
    index = {tuple(s): k for k, s in enumerate(states)}
    q = np.zeros((len(states), len(states)))
    for k, s in enumerate(states):
        for i in range(len(s)):
            t = list(s)
            t[i] = 1 - t[i]
            j = index.get(tuple(t))
            if j is not None:
                q[k, j] = nu[i] if s[i] == 0 else mu[i]
        q[k, k] = -q[k].sum()
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -------------------------------------------------------------- acceptance reporting

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_addoption(parser):
    parser.addoption("--large", action="store_true", help="also run the 8x8 hitting-time lattice")


@pytest.fixture
def large(request):
    return request.config.getoption("--large")


@pytest.fixture
def report():
    """Record and print one pass/fail line for an acceptance criterion."""

    def _report(number, title, ok, detail=""):
        ok = bool(ok)
        ACCEPTANCE_RESULTS[number] = (ok, f"{title}: {detail}" if detail else title)
        print(f"\nACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}")
