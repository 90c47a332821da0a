"""Blockade-constrained excitation processes: Rydberg gases and CSMA networks.

Modules
-------
graph        interference graphs (unit disk, lattice, line)
statespace   feasible configurations and maximum independent sets
equilibrium  exact stationary law and excitation probabilities
dynamics     generator, transient solution, event-driven simulation
physics      Rabi frequencies to rates, validity regime, one-atom law
tuner        stochastic approximation of target excitation probabilities
cli          ``rydnet`` command line
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CapacityError,
    ConfigError,
    InfeasibleTargetError,
    InvalidInputError,
    RydnetError,
    SolverError,
)
from .graph import (  # noqa: E402
    InterferenceGraph,
    blocking_count,
    build_unit_disk,
    lattice_graph,
    line_graph,
)
from .physics import TWO_PI_MHZ, LaserParams, RateVector, rates_from_rabi  # noqa: E402
from .statespace import StateSpace, enumerate_feasible, is_feasible, maximum_independent_sets  # noqa: E402
from .equilibrium import EquilibriumTable, stationary_distribution  # noqa: E402
