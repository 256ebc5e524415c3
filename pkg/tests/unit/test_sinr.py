import numpy as np
import pandas as pd
import pytest

from daamimo.constants import columns
from daamimo.covariance import (CovarianceSet, OneRingParams,
                                build_covariance_set)
from daamimo.estimation import build_estimation_set
from daamimo.scenario import build_custom_network, hexagon_centers
from daamimo.sinr import (ImaginaryResidualError, PowerAllocation,
                          SinrCoefficients, _real, closed_form_sinr,
                          compute_coefficients, monte_carlo_sinr,
                          sinr_terms, spectral_efficiency)


def random_network(rng, L, K, N, M, radius=800.0):
    centers = hexagon_centers(L, radius)

    def scatter(count, low, high):
        angle = rng.uniform(0, 2 * np.pi, (L, count))
        distance = rng.uniform(low, high, (L, count))
        offsets = distance[..., None] * np.stack(
            [np.cos(angle), np.sin(angle)], axis=-1)
        return centers[:, None, :] + offsets

    return build_custom_network(centers, scatter(N, 50, 400),
                                scatter(K, 100, 650), M, radius)


def scalar_sinr(betas, nu, rho_tr, sigma2):
    """SINR of single-antenna arrays, written out term by term."""
    L, K, _, N = betas.shape
    Q = np.zeros((L, K, N))
    for l in range(L):
        for i in range(K):
            for n in range(N):
                Q[l, i, n] = sum(betas[m, i, l, n] for m in range(L)) \
                    + 1 / rho_tr
    W = np.zeros((L, K, N))
    for l in range(L):
        for i in range(K):
            for n in range(N):
                W[l, i, n] = betas[l, i, l, n] / Q[l, i, n]
    gamma = np.zeros((L, K))
    for j in range(L):
        for k in range(K):
            signal = sum(nu[j, k, n] * W[j, k, n] * betas[j, k, j, n]
                         for n in range(N)) ** 2
            noise = sigma2
            for l in range(L):
                for i in range(K):
                    for n in range(N):
                        noise += (nu[l, i, n] ** 2 * W[l, i, n] ** 2
                                  * Q[l, i, n] * betas[j, k, l, n])
                if l != j:
                    noise += sum(nu[l, k, n] * W[l, k, n] * betas[j, k, l, n]
                                 for n in range(N)) ** 2
            gamma[j, k] = signal / noise
    return gamma


@pytest.fixture
def setup():
    rng = np.random.default_rng(2024)
    scenario = random_network(rng, L=2, K=2, N=2, M=4)
    params = OneRingParams.calibrated(edge_distance=650.0, sigma2=1.0)
    covariances = build_covariance_set(scenario, params)
    estimation = build_estimation_set(covariances, scenario.rho_tr)
    coefficients = compute_coefficients(covariances, estimation)
    return scenario, covariances, estimation, coefficients


def test_spectral_efficiency():
    assert spectral_efficiency(1.0, K=10, tau_c=200) == pytest.approx(0.95)
    assert spectral_efficiency(0.0, K=10, tau_c=200) == 0.0
    with pytest.raises(ValueError):
        spectral_efficiency(1.0, K=10, tau_c=10)


def test_single_term_sinr():
    # GIVEN chi = 2, zeta = 1, nu = 1, no other cells
    coefficients = SinrCoefficients(
        chi=np.array([[[2.0]]]), zeta=np.ones((1, 1, 1, 1, 1)),
        xi=np.zeros((1, 1, 1, 1)), power_traces=np.ones((1, 1, 1)))

    # WHEN sigma2 = 1
    report = closed_form_sinr(coefficients,
                              PowerAllocation(np.ones((1, 1, 1))), 1.0)

    # THEN gamma = 4 / (1 + 1)
    assert report.gamma[0, 0] == pytest.approx(2.0)
    assert report.se[0, 0] == pytest.approx((1 - 1 / 200) * np.log2(3.0))


def test_zero_power_gives_zero_sinr(setup):
    _, _, _, coefficients = setup

    report = closed_form_sinr(coefficients,
                              PowerAllocation(np.zeros((2, 2, 2))), 1.0)

    np.testing.assert_array_equal(report.gamma, 0.0)
    assert report.sum_se == 0.0


def test_closed_form_rejects_bad_input(setup):
    _, _, _, coefficients = setup
    allocation = PowerAllocation(np.ones((2, 2, 2)))

    with pytest.raises(ValueError):
        closed_form_sinr(coefficients, allocation, sigma2=0.0)
    with pytest.raises(ValueError):
        closed_form_sinr(coefficients, PowerAllocation(np.ones((1, 2, 2))),
                         sigma2=1.0)


@pytest.mark.parametrize("nu", [np.full((1, 1, 1), -0.1),
                                np.full((1, 1, 1), np.nan),
                                np.ones((2, 2))])
def test_power_allocation_validation(nu):
    with pytest.raises(ValueError):
        PowerAllocation(nu)


def test_coefficient_shapes(setup):
    _, _, _, coefficients = setup

    assert coefficients.shape == (2, 2, 2)
    assert coefficients.zeta.shape == (2, 2, 2, 2, 2)
    assert coefficients.xi.shape == (2, 2, 2, 2)
    assert np.all(coefficients.xi[0, :, 0] == 0)
    assert np.all(coefficients.xi[1, :, 1] == 0)
    assert np.all(coefficients.chi > 0)
    assert np.all(coefficients.zeta >= 0)


def test_imaginary_residual_is_rejected():
    with pytest.raises(ImaginaryResidualError) as excinfo:
        _real("chi", np.array([1.0 + 0.1j, 2.0]))

    assert excinfo.value.residual == pytest.approx(0.05)
    assert excinfo.value.name == "chi"


def test_cell_free_matches_scalar_arithmetic():
    # GIVEN 100 random single-antenna instances
    rng = np.random.default_rng(7)
    for _ in range(100):
        L, K, N = rng.integers(1, 4, size=3)
        betas = 10 ** rng.uniform(-3, 1, size=(L, K, L, N))
        covariances = CovarianceSet(betas[..., None, None] + 0j, betas)
        rho_tr, sigma2 = rng.uniform(0.5, 20), rng.uniform(0.1, 2)
        nu = rng.uniform(0, 1, size=(L, K, N))

        # WHEN evaluating the closed form
        estimation = build_estimation_set(covariances, rho_tr)
        coefficients = compute_coefficients(covariances, estimation)
        report = closed_form_sinr(coefficients, PowerAllocation(nu), sigma2)

        # THEN it equals the term by term evaluation
        expected = scalar_sinr(betas, nu, rho_tr, sigma2)
        np.testing.assert_allclose(report.gamma, expected, rtol=1e-10)


def test_sinr_terms_split(setup):
    _, _, _, coefficients = setup
    nu = np.full((2, 2, 2), 0.5)

    signal, interference = sinr_terms(coefficients, nu)
    report = closed_form_sinr(coefficients, PowerAllocation(nu), 2.0)

    np.testing.assert_allclose(report.gamma, signal / (interference + 2.0))


def test_monte_carlo_matches_closed_form(setup):
    # GIVEN a random two cell network and an uneven allocation
    scenario, covariances, estimation, coefficients = setup
    rng = np.random.default_rng(99)
    nu = rng.uniform(0.2, 1.0, size=(2, 2, 2))
    nu /= np.sqrt(np.einsum("lin,lin->l", nu ** 2,
                            estimation.power_traces))[:, None, None]
    allocation = PowerAllocation(nu)

    # WHEN simulating 10^5 draws
    closed = closed_form_sinr(coefficients, allocation, scenario.sigma2)
    simulated = monte_carlo_sinr(covariances, estimation, allocation,
                                 scenario.sigma2, draws=100_000, seed=1)

    # THEN every user agrees within four standard errors
    assert simulated.draws == 100_000
    gap = np.abs(simulated.gamma - closed.gamma)
    assert np.all(gap <= 4 * simulated.gamma_stderr)
    assert np.all(gap <= 0.05 * closed.gamma)


def test_monte_carlo_is_reproducible(setup):
    scenario, covariances, estimation, _ = setup
    allocation = PowerAllocation(np.full((2, 2, 2), 0.3))

    first = monte_carlo_sinr(covariances, estimation, allocation, 1.0,
                             draws=500, seed=3, batch_size=200)
    second = monte_carlo_sinr(covariances, estimation, allocation, 1.0,
                              draws=500, seed=3, batch_size=200)

    np.testing.assert_array_equal(first.gamma, second.gamma)
    with pytest.raises(ValueError):
        monte_carlo_sinr(covariances, estimation, allocation, 1.0,
                         draws=1, seed=3)


def test_report_frame_and_csv(tmp_path, setup):
    _, _, _, coefficients = setup
    report = closed_form_sinr(coefficients,
                              PowerAllocation(np.full((2, 2, 2), 0.3)), 1.0)

    frame = report.to_frame()
    path = tmp_path / "report.csv"
    report.to_csv(str(path))

    assert list(frame.columns) == columns.REPORT
    assert len(frame) == 4
    assert list(pd.read_csv(path).columns) == columns.REPORT
    np.testing.assert_allclose(report.cell_se, report.se.sum(axis=1))
    assert report.min_se == pytest.approx(report.se.min())


def scaled_identity_set(beta, M):
    """One cell, one user, one array with ``R = beta I``."""
    matrices = beta * np.eye(M, dtype=complex)[None, None, None, None]
    return CovarianceSet(matrices, np.full((1, 1, 1, 1), beta))


@pytest.mark.parametrize("beta, rho_tr, M", [
    (1.0, 10.0, 1), (0.5, 10.0, 4), (2.0, 0.3, 8), (1e-3, 1e3, 16)])
def test_coefficients_of_scaled_identity(beta, rho_tr, M):
    # GIVEN R = beta I for a lone user
    covariances = scaled_identity_set(beta, M)

    # WHEN computing the coefficients
    estimation = build_estimation_set(covariances, rho_tr)
    coefficients = compute_coefficients(covariances, estimation)

    # THEN W = beta / (beta + 1/rho) I gives the diagonal algebra
    shrink = beta / (beta + 1 / rho_tr)
    np.testing.assert_allclose(estimation.W[0, 0, 0],
                               shrink * np.eye(M), atol=1e-14)
    assert coefficients.chi[0, 0, 0] == pytest.approx(
        M * beta ** 2 / (beta + 1 / rho_tr), rel=1e-12)
    assert coefficients.zeta[0, 0, 0, 0, 0] == pytest.approx(
        M * beta ** 3 / (beta + 1 / rho_tr), rel=1e-12)
    assert coefficients.power_traces[0, 0, 0] == pytest.approx(
        M * beta * shrink, rel=1e-12)


def test_coefficients_match_brute_force_traces():
    # GIVEN a random two cell network with three antenna arrays
    rng = np.random.default_rng(31)
    scenario = random_network(rng, L=2, K=2, N=2, M=3)
    params = OneRingParams.calibrated(edge_distance=650.0, sigma2=1.0)
    covariances = build_covariance_set(scenario, params)
    estimation = build_estimation_set(covariances, scenario.rho_tr)

    # WHEN computing the coefficients
    coefficients = compute_coefficients(covariances, estimation)

    # THEN they equal the traces summed entry by entry, with W from an
    # explicit inverse of Q
    R = covariances.matrices
    L, K, N, M = covariances.shape
    W = np.empty((L, K, N, M, M), dtype=complex)
    Q = np.empty_like(W)
    for l, i, n in np.ndindex(L, K, N):
        Q[l, i, n] = sum(R[m, i, l, n] for m in range(L)) + \
            np.eye(M) / scenario.rho_tr
        W[l, i, n] = R[l, i, l, n] @ np.linalg.inv(Q[l, i, n])

    def trace3(A, B, C):
        return sum(A[a, b] * B[b, c] * C[c, a]
                   for a in range(M) for b in range(M) for c in range(M))

    def trace2(A, B):
        return sum(A[a, b] * B[b, a] for a in range(M) for b in range(M))

    chi = np.zeros((L, K, N))
    zeta = np.zeros((L, K, L, K, N))
    xi = np.zeros((L, K, L, N))
    for j, k, n in np.ndindex(L, K, N):
        chi[j, k, n] = trace2(W[j, k, n], R[j, k, j, n]).real
    for j, k, l, i, n in np.ndindex(L, K, L, K, N):
        WQ = W[l, i, n] @ Q[l, i, n]
        zeta[j, k, l, i, n] = trace3(WQ, W[l, i, n].conj().T,
                                     R[j, k, l, n]).real
    for j, k, l, n in np.ndindex(L, K, L, N):
        if l != j:
            xi[j, k, l, n] = trace2(W[l, k, n], R[j, k, l, n]).real

    for name, expected in (("chi", chi), ("zeta", zeta), ("xi", xi)):
        actual = getattr(coefficients, name)
        np.testing.assert_allclose(
            actual, expected, rtol=1e-8,
            atol=1e-10 * np.abs(expected).max(), err_msg=name)


@pytest.mark.parametrize("seed", [3, 17, 29])
def test_sinr_increases_with_power_scale(seed):
    # GIVEN a random network and allocation
    rng = np.random.default_rng(seed)
    scenario = random_network(rng, L=2, K=2, N=2, M=3)
    params = OneRingParams.calibrated(edge_distance=650.0, sigma2=1.0)
    covariances = build_covariance_set(scenario, params)
    estimation = build_estimation_set(covariances, scenario.rho_tr)
    coefficients = compute_coefficients(covariances, estimation)
    nu = rng.uniform(0.1, 1.0, size=(2, 2, 2))

    # WHEN scaling every coefficient by 0.5, 1 and 2
    gammas = [closed_form_sinr(coefficients, PowerAllocation(c * nu),
                               scenario.sigma2).gamma
              for c in (0.5, 1.0, 2.0)]

    # THEN every user's SINR strictly increases with the scale
    assert np.all(gammas[0] < gammas[1])
    assert np.all(gammas[1] < gammas[2])


def test_monte_carlo_with_perfect_estimates():
    # GIVEN a lone user, R = beta I with eight antennas and a pilot so
    # strong the estimates are exact
    beta, nu, sigma2, M = 0.5, 1.0, 1.0, 8
    covariances = scaled_identity_set(beta, M)
    estimation = build_estimation_set(covariances, rho_tr=1e12)
    coefficients = compute_coefficients(covariances, estimation)
    allocation = PowerAllocation(np.full((1, 1, 1), nu))
    expected = nu ** 2 * (M * beta) ** 2 / (nu ** 2 * M * beta ** 2 + sigma2)

    # WHEN evaluating the closed form and simulating 10^5 draws
    closed = closed_form_sinr(coefficients, allocation, sigma2)
    simulated = monte_carlo_sinr(covariances, estimation, allocation,
                                 sigma2, draws=100_000, seed=8)

    # THEN both give the maximum ratio SINR with exact channel knowledge
    assert closed.gamma[0, 0] == pytest.approx(expected, rel=1e-9)
    gap = abs(simulated.gamma[0, 0] - expected)
    assert gap <= 4 * simulated.gamma_stderr[0, 0]
    assert simulated.gamma_stderr[0, 0] < 0.01 * expected


def test_monte_carlo_warns_below_minimum_draws(setup, caplog):
    _, covariances, estimation, _ = setup
    allocation = PowerAllocation(np.full((2, 2, 2), 0.3))

    with caplog.at_level("WARNING"):
        monte_carlo_sinr(covariances, estimation, allocation, 1.0,
                         draws=10, seed=3)

    assert any("fewer than 1000" in record.message
               for record in caplog.records)
