import math

import numpy as np
import pandas as pd
import pytest
from mock import patch

from daamimo.conic import FeasibilityVerdict, solve_feasibility
from daamimo.constants import columns, verdict
from daamimo.covariance import OneRingParams, build_covariance_set
from daamimo.estimation import build_estimation_set
from daamimo.power import (BisectionError, BisectionParams, MaxMinResult,
                           build_feasibility_problem, equal_power,
                           gamma_upper_bound, maxmin_power, trace_frame,
                           verify_power_constraint)
from daamimo.scenario import (GeometryParams, build_custom_network,
                              build_ring_network)
from daamimo.sinr import PowerAllocation, closed_form_sinr, \
    compute_coefficients


def make_network(L, K, N, M):
    scenario = build_ring_network(GeometryParams(300, 700), L=L, K=K, N=N,
                                   M=M)
    params = OneRingParams.calibrated(edge_distance=700.0, sigma2=1.0)
    covariances = build_covariance_set(scenario, params)
    estimation = build_estimation_set(covariances, scenario.rho_tr)
    coefficients = compute_coefficients(covariances, estimation)
    return scenario, estimation, coefficients


@pytest.fixture(scope="module")
def single_cell():
    return make_network(L=1, K=2, N=1, M=4)


@pytest.fixture(scope="module")
def two_cells():
    return make_network(L=2, K=1, N=2, M=2)


def min_sinr_on_unit_powers(coefficients, sigma2, t):
    """Smallest SINR of a single cell, single array network for scaled
    powers ``t[:, k] = nu_k sqrt(p_k)``."""
    chi = coefficients.chi[0, :, 0]
    zeta = coefficients.zeta[0, :, 0, :, 0]
    p = coefficients.power_traces[0, :, 0]
    nu = t / np.sqrt(p)
    signal = (nu * chi) ** 2
    interference = nu ** 2 @ zeta.T + sigma2
    return (signal / interference).min(axis=1)


def test_equal_power_uses_total_network_power(two_cells):
    _, estimation, _ = two_cells

    allocation = equal_power(estimation)

    powers = allocation.cell_powers(estimation.power_traces)
    assert powers.sum() == pytest.approx(2.0)
    assert np.all(allocation.nu == allocation.nu[0, 0, 0])


def test_verify_power_constraint(two_cells):
    _, estimation, coefficients = two_cells
    allocation = equal_power(estimation)

    check = verify_power_constraint(allocation, estimation)
    doubled = verify_power_constraint(PowerAllocation(2 * allocation.nu),
                                      estimation)

    assert check.cell_powers.shape == (2,)
    assert check.passed == bool(np.all(check.cell_powers <= 1 + 1e-9))
    assert not doubled.passed


def test_equal_power_can_exceed_a_cell_budget():
    # GIVEN two cells, with one user moved 50 m from its array
    ring = build_ring_network(GeometryParams(300, 700), L=2, K=2, N=1, M=2)
    users = ring.user_positions.copy()
    array = ring.array_positions[0, 0]
    inward = ring.cell_centers[0] - array
    users[0, 0] = array + 50.0 * inward / np.linalg.norm(inward)
    scenario = build_custom_network(ring.cell_centers, ring.array_positions,
                                    users, M=2, cell_radius=ring.cell_radius)
    params = OneRingParams.calibrated(edge_distance=700.0, sigma2=1.0)
    covariances = build_covariance_set(scenario, params)
    estimation = build_estimation_set(covariances, scenario.rho_tr)

    # WHEN giving every user and array the same power
    check = verify_power_constraint(equal_power(estimation), estimation)

    # THEN the network transmits L in total but the near cell is over
    assert check.cell_powers.sum() == pytest.approx(2.0)
    assert check.cell_powers[0] > 1 + 1e-9
    assert check.cell_powers[1] < 1
    assert not check.passed


def test_zero_power_passes_the_constraint(two_cells):
    _, estimation, _ = two_cells

    check = verify_power_constraint(PowerAllocation(np.zeros((2, 1, 2))),
                                    estimation)

    np.testing.assert_array_equal(check.cell_powers, 0.0)
    assert check.passed


def test_gamma_upper_bound_dominates_equal_power(two_cells):
    scenario, estimation, coefficients = two_cells

    bound = gamma_upper_bound(coefficients, scenario.sigma2)
    report = closed_form_sinr(coefficients, equal_power(estimation),
                              scenario.sigma2)

    assert bound > 0
    assert np.all(report.gamma <= bound)


def test_feasibility_problem_single_cell_has_no_auxiliaries(single_cell):
    _, _, coefficients = single_cell

    problem = build_feasibility_problem(coefficients, 1.0, 1.0)

    assert problem.n_vars == 2
    assert np.all(problem.rho_index == -1)
    # two SINR cones and one power cone
    assert [c.name for c in problem.program.cones] == [
        "sinr[0,0]", "sinr[0,1]", "power[0]"]
    assert problem.program.var_names == ["nu[0,0,0]", "nu[0,1,0]"]


def test_feasibility_problem_layout(two_cells):
    _, _, coefficients = two_cells

    problem = build_feasibility_problem(coefficients, 0.5, 1.0)

    # nu: 2*1*2, rho: 2 users * 1 other cell * 2 arrays
    assert problem.n_vars == 8
    assert problem.rho_index[0, 0, 1].tolist() == [4, 5]
    assert problem.rho_index[1, 0, 0].tolist() == [6, 7]
    assert np.all(problem.rho_index[0, 0, 0] == -1)
    assert len(problem.program.cones) == 4
    assert problem.program.G.shape == (4 + 8, 8)


def test_feasibility_problem_rejects_bad_input(single_cell):
    _, _, coefficients = single_cell

    with pytest.raises(ValueError):
        build_feasibility_problem(coefficients, -0.1, 1.0)
    with pytest.raises(ValueError):
        build_feasibility_problem(coefficients, 1.0, 0.0)


def test_sinr_cone_matches_closed_form(two_cells):
    # GIVEN an allocation and its SINR
    scenario, estimation, coefficients = two_cells
    allocation = equal_power(estimation)
    gamma = 0.7
    report = closed_form_sinr(coefficients, allocation, scenario.sigma2)
    problem = build_feasibility_problem(coefficients, gamma,
                                        scenario.sigma2)

    # WHEN the auxiliaries sit at their lower bounds
    point = np.zeros(problem.n_vars)
    point[problem.nu_index.ravel()] = allocation.nu.ravel()
    L = coefficients.shape[0]
    for j, k, l, n in np.ndindex(L, 1, L, 2):
        if l != j:
            point[problem.rho_index[j, k, l, n]] = abs(
                coefficients.xi[j, k, l, n]) * allocation.nu[l, k, n]

    # THEN the cone norm is the interference plus noise root
    for j in range(L):
        x = problem.sinr_vector(j, 0, point)
        signal = (allocation.nu[j, 0] @ coefficients.chi[j, 0]) ** 2
        assert signal / (x @ x) <= report.gamma[j, 0] * (1 + 1e-9)


def test_allocation_from_clips_and_rescales(single_cell):
    _, _, coefficients = single_cell
    problem = build_feasibility_problem(coefficients, 1.0, 1.0)
    p = coefficients.power_traces[0, :, 0]
    point = np.array([2.0 / np.sqrt(p[0]), -1e-12])

    allocation = problem.allocation_from(point)

    assert allocation.nu[0, 1, 0] == 0.0
    assert allocation.cell_powers(coefficients.power_traces)[0] == \
        pytest.approx(1.0)


def test_maxmin_matches_brute_force(single_cell):
    # GIVEN one cell, two users, one array of four antennas
    scenario, estimation, coefficients = single_cell
    sigma2 = scenario.sigma2
    epsilon = 1e-3

    # WHEN running the bisection
    result = maxmin_power(coefficients, estimation, sigma2,
                          BisectionParams(epsilon=epsilon))

    # AND scanning the power region on a grid and on its boundary
    axis = np.arange(0.0, 1.0 + 5e-4, 1e-3)
    t1, t2 = np.meshgrid(axis, axis, indexing="ij")
    inside = t1 ** 2 + t2 ** 2 <= 1.0
    grid = np.stack([t1[inside], t2[inside]], axis=-1)
    gamma_grid = min_sinr_on_unit_powers(coefficients, sigma2, grid).max()
    theta = np.linspace(0.0, math.pi / 2, 200_001)
    circle = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    gamma_fine = min_sinr_on_unit_powers(coefficients, sigma2, circle).max()

    # THEN the bisection lands within epsilon of the optimum
    gamma_star = result.gamma_star
    assert abs(gamma_star - gamma_grid) <= max(
        epsilon, gamma_fine - gamma_grid) + 1e-9
    assert gamma_star <= gamma_fine * (1 + 1e-6)
    # AND the witness reaches gamma_star within the power budget
    report = closed_form_sinr(coefficients, result.allocation, sigma2)
    assert report.gamma.min() >= gamma_star * (1 - 1e-4)
    assert verify_power_constraint(result.allocation, estimation).passed


def test_maxmin_beats_equal_power(two_cells):
    scenario, estimation, coefficients = two_cells

    allocation, gamma_star = maxmin_power(coefficients, estimation,
                                          scenario.sigma2)
    equal = closed_form_sinr(coefficients, equal_power(estimation),
                             scenario.sigma2)

    assert gamma_star >= equal.gamma.min() - 1e-3
    assert isinstance(allocation, PowerAllocation)


def test_bisection_step_count(single_cell):
    # GIVEN a fixed bracket [0, 8]
    scenario, estimation, coefficients = single_cell
    params = BisectionParams(gamma_min=0.0, gamma_max=8.0, epsilon=1e-3)

    result = maxmin_power(coefficients, estimation, scenario.sigma2, params)

    # THEN every step halves the bracket
    assert isinstance(result, MaxMinResult)
    assert result.iterations <= math.ceil(math.log2(8.0 / 1e-3))
    widths = [s.gamma_max - s.gamma_min for s in result.trace]
    np.testing.assert_allclose(widths, 8.0 / 2 ** np.arange(len(widths)))
    for step in result.trace:
        assert step.gamma_probe == pytest.approx(
            (step.gamma_min + step.gamma_max) / 2)
        assert step.verdict in (verdict.FEASIBLE, verdict.INFEASIBLE)


def test_trace_frame(single_cell):
    scenario, estimation, coefficients = single_cell
    result = maxmin_power(coefficients, estimation, scenario.sigma2,
                          BisectionParams(gamma_max=4.0, epsilon=0.5))

    frame = trace_frame(result.trace)

    assert isinstance(frame, pd.DataFrame)
    assert list(frame.columns) == columns.TRACE
    assert frame["iteration"].tolist() == list(
        range(1, result.iterations + 1))


@patch('daamimo.power.solve_feasibility')
def test_numerical_failure_raises(mock_solve, single_cell):
    # GIVEN an oracle that cannot decide
    mock_solve.return_value = FeasibilityVerdict(
        verdict.NUMERICAL_FAILURE, message="stalled")
    scenario, estimation, coefficients = single_cell

    # WHEN bisecting
    with pytest.raises(BisectionError) as excinfo:
        maxmin_power(coefficients, estimation, scenario.sigma2,
                     BisectionParams(gamma_max=2.0))

    # THEN the error carries the bracket and the failed step
    assert excinfo.value.gamma_min == 0.0
    assert excinfo.value.gamma_max == 2.0
    assert len(excinfo.value.trace) == 1
    assert "stalled" in str(excinfo.value)


@patch('daamimo.power.solve_feasibility')
def test_iteration_limit_raises(mock_solve, single_cell):
    mock_solve.return_value = FeasibilityVerdict(verdict.INFEASIBLE)
    scenario, estimation, coefficients = single_cell

    with pytest.raises(BisectionError) as excinfo:
        maxmin_power(coefficients, estimation, scenario.sigma2,
                     BisectionParams(gamma_max=1.0, epsilon=1e-9,
                                     max_iters=3))

    assert len(excinfo.value.trace) == 3
    assert excinfo.value.gamma_max == pytest.approx(0.125)


@patch('daamimo.power.solve_feasibility')
def test_never_feasible_keeps_unit_power(mock_solve, single_cell):
    mock_solve.return_value = FeasibilityVerdict(verdict.INFEASIBLE)
    scenario, estimation, coefficients = single_cell

    result = maxmin_power(coefficients, estimation, scenario.sigma2,
                          BisectionParams(gamma_max=1.0, epsilon=0.1))

    assert result.gamma_star == 0.0
    assert result.allocation.cell_powers(
        coefficients.power_traces)[0] == pytest.approx(1.0)


@pytest.mark.parametrize("params", [BisectionParams(epsilon=0.0),
                                    BisectionParams(gamma_min=-1.0),
                                    BisectionParams(gamma_min=2.0,
                                                    gamma_max=1.0)])
def test_bisection_params_validation(params):
    with pytest.raises(ValueError):
        params.validate()


def test_infeasible_gamma_min_is_rejected(single_cell):
    scenario, estimation, coefficients = single_cell
    bound = gamma_upper_bound(coefficients, scenario.sigma2)

    with pytest.raises(ValueError):
        maxmin_power(coefficients, estimation, scenario.sigma2,
                     BisectionParams(gamma_min=bound * 1.5,
                                     gamma_max=bound * 2))


def test_feasibility_is_monotone_in_gamma(two_cells):
    # GIVEN sampled pairs of targets below the upper bound
    scenario, _, coefficients = two_cells
    bound = gamma_upper_bound(coefficients, scenario.sigma2)
    rng = np.random.default_rng(3)

    for _ in range(5):
        low, high = np.sort(rng.uniform(0, bound, size=2))
        verdicts = [solve_feasibility(build_feasibility_problem(
            coefficients, gamma, scenario.sigma2).program)
            for gamma in (low, high)]

        # THEN a feasible higher target implies a feasible lower one
        if verdicts[1].feasible:
            assert verdicts[0].feasible


def test_vanishing_target_is_feasible(two_cells):
    # GIVEN a target SINR of 1e-12
    scenario, estimation, coefficients = two_cells
    problem = build_feasibility_problem(coefficients, 1e-12, scenario.sigma2)

    # WHEN deciding feasibility
    result = solve_feasibility(problem.program)

    # THEN it is feasible with a witness inside the power budget
    assert result.status == verdict.FEASIBLE
    allocation = problem.allocation_from(result.point)
    assert verify_power_constraint(allocation, estimation).passed
    # AND equal power, scaled into every cell budget, satisfies it too
    equal = equal_power(estimation)
    powers = equal.cell_powers(estimation.power_traces)
    nu = equal.nu / np.sqrt(max(powers.max(), 1.0))
    point = np.zeros(problem.n_vars)
    point[problem.nu_index.ravel()] = nu.ravel()
    L, K, N = coefficients.shape
    for j, k, l, n in np.ndindex(L, K, L, N):
        if l != j:
            point[problem.rho_index[j, k, l, n]] = abs(
                coefficients.xi[j, k, l, n]) * nu[l, k, n]
    assert problem.program.max_violation(point) <= 1e-12
