import math

import numpy as np
import pytest

from conftest import brute_theta
from rydnet.equilibrium import stationary_distribution
from rydnet.errors import InfeasibleTargetError, InvalidInputError
from rydnet.graph import lattice_graph, line_graph
from rydnet.physics import RateVector
from rydnet.statespace import enumerate_feasible
from rydnet.tuner import (
    Constant,
    PowerLaw,
    Schedule,
    ShiftedRoot,
    check_achievable,
    initial_state,
    line_analytic_solution,
    reference_schedule,
    parse_family,
    tune_exact,
    tune_step,
    tune_stochastic,
    validate_schedule,
)

W = 2 * math.pi * 1e6


# -------------------------------------------------------------- schedules


def test_families():
    assert Constant(3.0)(7) == 3.0
    assert PowerLaw(25, 2)(4) == 400
    assert ShiftedRoot(100, 10)(100) == 5.0
    assert parse_family("power 25 2") == PowerLaw(25.0, 2.0)
    assert parse_family("shifted_root 100 10") == ShiftedRoot(100.0, 10.0)
    assert parse_family("constant 0.5") == Constant(0.5)
    with pytest.raises(InvalidInputError):
        parse_family("cubic 1")


def test_reference_schedule_values():
    s = reference_schedule()
    assert s.a(1) == pytest.approx(100 / 11)
    assert s.T(5) == 250e-6
    assert s.m(3) == 225
    assert s.max_iterations == 10


def test_validate_reference_schedule_flags_square_sum():
    # p = 1/2 makes sum a^2 diverge (harmonic), which is flagged
    w = validate_schedule(reference_schedule(), "ensemble")
    assert len(w) == 1 and "a(n)^2" in w[0]


@pytest.mark.parametrize(
    "a,effort,estimator,n_warn",
    [
        (PowerLaw(1, -0.75), PowerLaw(1, 0.5), "time_average", 0),
        (PowerLaw(1, -1.0), Constant(1), "time_average", 1),
        (PowerLaw(1, -1.0), PowerLaw(1, 0.5), "time_average", 0),
        (PowerLaw(1, -1.5), Constant(1), "time_average", 1),
        (PowerLaw(1, -0.4), PowerLaw(1, 1.0), "time_average", 1),
        (PowerLaw(1, -0.75), Constant(1), "time_average", 1),
        (Constant(0.1), Constant(1), "time_average", 2),
    ],
)
def test_validate_exponent_rules(a, effort, estimator, n_warn):
    sched = Schedule(a, sample_horizon=effort)
    assert len(validate_schedule(sched, estimator)) == n_warn


def test_validate_effort_by_estimator():
    sched = Schedule(PowerLaw(1, -0.75), sample_horizon=Constant(1), sample_count=PowerLaw(1, 1))
    assert validate_schedule(sched, "ensemble") == []
    assert len(validate_schedule(sched, "time_average")) == 1


def test_validate_custom_and_zero():
    w = validate_schedule(Schedule(lambda n: 1 / n), "ensemble")
    assert len(w) == 1 and "custom" in w[0]
    w = validate_schedule(Schedule(Constant(0.0)), "ensemble")
    assert len(w) == 1 and "zero" in w[0]


# -------------------------------------------------------------- update rule


def test_tune_step_examples():
    st0 = initial_state(2, [1.0, 2.0], 5.0, [0.2, 0.4])
    assert np.array_equal(st0.omega_e, [1.0, 2.0])
    st1 = tune_step(st0, [0.2, 0.6], 2.0)
    assert st1.omega_e == pytest.approx([1.0, 2.0 * math.exp(-0.2)], rel=1e-15)
    assert st1.iteration == 1 and len(st1.history) == 1
    assert np.array_equal(st1.omega_e_at(0), [1.0, 2.0])
    assert np.array_equal(st1.omega_e_at(1), st1.omega_e)
    # the ratio moves by exp(-a * delta)
    assert st1.ratio[1] / st0.ratio[1] == pytest.approx(math.exp(-0.4), rel=1e-14)
    st2 = tune_step(st1, [0.0, 1.0], 0.0)
    assert np.array_equal(st2.omega_e, st1.omega_e)


def test_tune_step_clamp_and_validation():
    st0 = initial_state(1, 1.0, 5.0, 0.5, clamp=(0.5, 1.5))
    assert tune_step(st0, [0.0], 100.0).omega_e[0] == 1.5
    assert tune_step(st0, [1.0], 100.0).omega_e[0] == 0.5
    with pytest.raises(InvalidInputError):
        tune_step(st0, [1.2], 1.0)
    with pytest.raises(InvalidInputError):
        tune_step(st0, [0.5, 0.5], 1.0)
    with pytest.raises(InvalidInputError):
        tune_step(st0, [0.5], -1.0)
    with pytest.raises(InvalidInputError):
        initial_state(2, 1.0, 5.0, [0.5, 1.0])


# -------------------------------------------------------------- exact tuning


def test_tune_exact_single_atom():
    st = tune_exact(line_graph(1, 0), W, 6 * W, 0.3, Schedule(Constant(2.0), max_iterations=500))
    assert st.converged and st.metric <= 1e-6
    assert st.ratio[0] == pytest.approx(0.3 / 0.7, rel=1e-5)


def test_tune_exact_two_blocked():
    phi = 0.3
    st = tune_exact(line_graph(2, 1), W, 6 * W, phi, Schedule(Constant(2.0), max_iterations=1000))
    assert st.converged
    assert st.ratio == pytest.approx([phi / (1 - 2 * phi)] * 2, rel=1e-5)


@pytest.mark.parametrize("n,b,phi", [(5, 1, 0.3), (7, 2, 0.2), (9, 4, 1 / 6)])
def test_tune_exact_agrees_with_line_formula(n, b, phi):
    st = tune_exact(line_graph(n, b), W, 6 * W, phi, reference_schedule(400))
    assert st.converged
    ref = line_analytic_solution(n, b, phi, W)
    assert np.max(np.abs(st.omega_e / ref - 1)) <= 1e-3


def test_tune_exact_lattice_reaches_targets():
    phi = np.full(9, 0.25)
    st = tune_exact(lattice_graph(3, 3), W, 6 * W, phi, reference_schedule(400))
    assert st.converged
    assert brute_theta(lattice_graph(3, 3), st.ratio) == pytest.approx(phi, abs=2e-6)


# -------------------------------------------------------------- line formula


def test_line_formula_line3():
    oe = line_analytic_solution(3, 1, 0.2, 1.0)
    assert oe**2 == pytest.approx([1 / 3, 4 / 9, 1 / 3], rel=1e-14)


def test_line_formula_doubling_sequence():
    # b = 1, phi = 1/4: base 1/2, growth 3/2 ... check via brute force instead
    ratio = line_analytic_solution(6, 1, 0.25, 1.0) ** 2
    assert brute_theta(line_graph(6, 1), ratio) == pytest.approx([0.25] * 6, abs=1e-12)


@pytest.mark.parametrize("n,b", [(n, b) for n in (1, 2, 5, 9, 12) for b in (0, 1, 2, 4) if b < n])
@pytest.mark.parametrize("frac", [0.1, 0.5, 0.9])
def test_line_formula_grid(n, b, frac):
    phi = frac / (1 + b)
    ratio = line_analytic_solution(n, b, phi, 1.0) ** 2
    assert brute_theta(line_graph(n, b), ratio) == pytest.approx([phi] * n, abs=1e-10)


def test_line_formula_infeasible():
    with pytest.raises(InfeasibleTargetError):
        line_analytic_solution(9, 4, 0.2, 1.0)
    with pytest.raises(InfeasibleTargetError):
        line_analytic_solution(9, 4, 0.5, 1.0)
    with pytest.raises(InvalidInputError):
        line_analytic_solution(9, 4, 0.0, 1.0)
    with pytest.raises(InvalidInputError):
        line_analytic_solution(3, 3, 0.1, 1.0)


# -------------------------------------------------------------- achievable region


def test_two_blocked_region():
    space = enumerate_feasible(line_graph(2, 1))
    assert not check_achievable(space, [0.6, 0.6])
    assert not check_achievable(space, [0.5, 0.5])  # boundary
    res = check_achievable(space, [0.3, 0.3])
    assert res and res.residual <= 1e-9
    assert res.witness.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(res.witness >= res.margin)


def test_witness_reproduces_target():
    space = enumerate_feasible(lattice_graph(3, 3))
    phi = np.linspace(0.1, 0.3, 9)
    res = check_achievable(space, phi)
    assert res
    occ = space.occupancy_matrix().astype(float)
    assert np.max(np.abs(res.witness @ occ - phi)) <= 1e-9


def test_stationary_theta_is_achievable(rng):
    g = line_graph(7, 2)
    space = enumerate_feasible(g)
    for _ in range(5):
        th = stationary_distribution(space, RateVector.from_ratios(rng.uniform(0.1, 10, 7))).theta
        assert check_achievable(space, th)


def test_line_targets_above_limit_not_achievable():
    space = enumerate_feasible(line_graph(9, 4))
    assert check_achievable(space, np.full(9, 1 / 6))
    assert not check_achievable(space, np.full(9, 0.21))


def test_achievable_input_validation():
    space = enumerate_feasible(line_graph(2, 1))
    with pytest.raises(InvalidInputError):
        check_achievable(space, [0.3])
    with pytest.raises(InvalidInputError):
        check_achievable(space, [0.0, 0.3])


# -------------------------------------------------------------- stochastic tuning


CONVERGENT = Schedule(PowerLaw(20, -0.75), PowerLaw(250e-6, 2), Constant(1), 50)


def test_convergent_schedule_is_clean():
    assert validate_schedule(CONVERGENT, "time_average") == []


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_atom_time_average_tuning(seed):
    st = tune_stochastic(line_graph(1, 0), W, 6 * W, 0.3, CONVERGENT, "time_average", seed=seed)
    assert st.iteration == 50
    assert abs(st.ratio[0] / (0.3 / 0.7) - 1) <= 0.05
    assert st.metric <= 0.015


def test_zero_step_keeps_iterates():
    sched = Schedule(Constant(0.0), Constant(1e-5), Constant(10), 5)
    st = tune_stochastic(line_graph(3, 1), W, 6 * W, 0.2, sched, seed=0)
    for n in range(6):
        assert np.array_equal(st.omega_e_at(n), [W] * 3)


def test_stochastic_determinism_and_threads():
    sched = Schedule(ShiftedRoot(100, 10), Constant(250e-6), PowerLaw(5, 1), 4)
    g = line_graph(5, 1)
    a = tune_stochastic(g, W, 6 * W, 0.2, sched, seed=3, threads=1)
    b = tune_stochastic(g, W, 6 * W, 0.2, sched, seed=3, threads=2)
    c = tune_stochastic(g, W, 6 * W, 0.2, sched, seed=4, threads=1)
    assert np.array_equal(a.omega_e, b.omega_e)
    assert not np.array_equal(a.omega_e, c.omega_e)
    assert [r.theta_hat.tolist() for r in a.history] == [r.theta_hat.tolist() for r in b.history]


def test_stochastic_callback_and_exact_check():
    seen = []
    sched = Schedule(Constant(1.0), Constant(1e-4), Constant(20), 3)
    st = tune_stochastic(line_graph(3, 1), W, 6 * W, 0.2, sched, callback=seen.append, exact_check=False)
    assert [s.iteration for s in seen] == [1, 2, 3]
    assert st.metric is None
    with pytest.raises(InvalidInputError):
        tune_stochastic(line_graph(3, 1), W, 6 * W, 0.2, sched, estimator="bogus")
