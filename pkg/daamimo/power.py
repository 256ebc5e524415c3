# -*- coding: utf-8 -*-
# Copyright 2024 The daamimo authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Downlink power allocation: equal power and max-min SINR by bisection."""
from dataclasses import dataclass, field
from typing import List, Optional
import logging

import numpy as np
import pandas as pd
from scipy import sparse

from daamimo.conic import SocConstraint, SocProgram, solve_feasibility
from daamimo.constants import columns, defaults, verdict
from daamimo.estimation import EstimationSet
from daamimo.sinr import PowerAllocation, SinrCoefficients

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BisectionParams:
    """Bisection bracket and stopping rule.

    Attributes:
        gamma_min (float): Lower end, must be feasible.
        gamma_max (float, optional): Upper end. Defaults to a bound no
            allocation can reach.
        epsilon (float): Stop once the bracket is narrower than this.
        max_iters (int): Hard limit on feasibility probes.
    """
    gamma_min: float = 0.0
    gamma_max: Optional[float] = None
    epsilon: float = defaults.BISECTION_EPSILON
    max_iters: int = defaults.BISECTION_MAX_ITERS

    def validate(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.gamma_min < 0:
            raise ValueError("gamma_min must be nonnegative")
        if self.gamma_max is not None and not self.gamma_max > self.gamma_min:
            raise ValueError("gamma_max must exceed gamma_min")


@dataclass(frozen=True)
class BisectionStep:
    iteration: int
    gamma_min: float
    gamma_max: float
    gamma_probe: float
    verdict: str
    max_violation: float


class BisectionError(RuntimeError):
    """The feasibility oracle failed inside the bisection.

    Attributes:
        gamma_min (float): Largest SINR proven feasible.
        gamma_max (float): Smallest SINR not excluded.
        trace (list): Steps taken so far.
    """

    def __init__(self, message: str, gamma_min: float, gamma_max: float,
                 trace: List[BisectionStep]):
        super().__init__(
            f"{message} (bracket [{gamma_min:.6g}, {gamma_max:.6g}])")
        self.gamma_min = gamma_min
        self.gamma_max = gamma_max
        self.trace = trace


@dataclass(frozen=True)
class PowerCheck:
    cell_powers: np.ndarray
    passed: bool


@dataclass(frozen=True)
class MaxMinResult:
    allocation: PowerAllocation
    gamma_star: float
    trace: List[BisectionStep] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def __iter__(self):
        return iter((self.allocation, self.gamma_star))


def trace_frame(trace: List[BisectionStep]) -> pd.DataFrame:
    return pd.DataFrame([[getattr(step, c) for c in columns.TRACE]
                         for step in trace], columns=columns.TRACE)


def equal_power(estimation_set: EstimationSet) -> PowerAllocation:
    """One coefficient for every user and array of the network.

    ``nu = sqrt(L / sum_{l, i, n} tr(W Q W^H))``, so the network transmits
    total power ``L``. Per cell this is one on average only; asymmetric
    layouts can push a cell above its budget, which
    :func:`verify_power_constraint` reports.

    Raises:
        ValueError: If the total estimate power is zero.
    """
    traces = estimation_set.power_traces
    total = float(traces.sum())
    if not total > 0:
        raise ValueError("the channel estimates carry zero power")
    nu = np.sqrt(traces.shape[0] / total)
    logger.debug(f"Equal power coefficient {nu:.6g}")
    return PowerAllocation(np.full(traces.shape, nu))


def verify_power_constraint(allocation: PowerAllocation,
                            estimation_set: EstimationSet,
                            slack: float = defaults.POWER_SLACK
                            ) -> PowerCheck:
    """Cell transmit powers and whether each is at most ``1 + slack``."""
    powers = allocation.cell_powers(estimation_set.power_traces)
    return PowerCheck(cell_powers=powers,
                      passed=bool(np.all(powers <= 1 + slack)))


def gamma_upper_bound(coefficients: SinrCoefficients, sigma2: float) -> float:
    """An SINR no user can exceed under the power constraint.

    By Cauchy-Schwarz ``(sum_n nu chi)^2 <= sum_n nu^2 p * sum_n chi^2 / p``
    and the first factor is at most one, while the interference is at
    least ``sigma2``. The largest per-user bound is used as the bracket
    top.
    """
    p = coefficients.power_traces
    ratio = np.divide(coefficients.chi ** 2, p, out=np.zeros_like(p),
                      where=p > 0)
    return float(np.max(ratio.sum(axis=-1)) / sigma2)


@dataclass(frozen=True)
class FeasibilityProblemSpec:
    """Constraints for "every user reaches SINR ``gamma``".

    The variables are ``nu`` (``L*K*N`` entries, in ``[l, i, n]`` order)
    followed by the auxiliaries ``rho[j, k, l, n]`` for ``l != j`` that
    bound the coherent interference terms.
    """
    coefficients: SinrCoefficients
    gamma: float
    sigma2: float
    nu_index: np.ndarray
    rho_index: np.ndarray
    program: SocProgram

    @property
    def n_vars(self) -> int:
        return self.program.n_vars

    def sinr_vector(self, j: int, k: int, point: np.ndarray) -> np.ndarray:
        """The vector ``x_jk`` whose norm is the interference-plus-noise
        root of user ``(j, k)``."""
        cone = self.program.cones[j * self.nu_index.shape[1] + k]
        return (cone.A @ point + cone.b) / np.sqrt(self.gamma)

    def allocation_from(self, point: np.ndarray) -> PowerAllocation:
        """Power coefficients of a solver point.

        Round-off below zero is clipped and a cell whose power exceeds one
        is scaled back onto the constraint.
        """
        nu = np.clip(point[self.nu_index], 0.0, None)
        powers = np.einsum("lin,lin->l", nu ** 2,
                           self.coefficients.power_traces)
        excess = np.where(powers > 1.0, 1.0 / np.sqrt(powers), 1.0)
        return PowerAllocation(nu * excess[:, None, None])


def build_feasibility_problem(coefficients: SinrCoefficients, gamma: float,
                              sigma2: float) -> FeasibilityProblemSpec:
    """Second-order cone constraints for a target SINR.

    User ``(j, k)`` gets the cone ``sqrt(gamma) ||x_jk|| <= sum_n chi nu``
    where ``x_jk`` stacks ``sqrt(zeta) nu`` over all ``(l, i, n)``, the sums
    ``sum_n rho[j, k, l, n]`` over ``l != j`` and ``sqrt(sigma2)``. The
    auxiliaries satisfy ``|xi[j, k, l, n]| nu[l, k, n] <= rho[j, k, l, n]``
    and every cell ``l`` gets ``||sqrt(p) nu_l|| <= 1``.

    Args:
        coefficients (SinrCoefficients): chi, zeta, xi and the power
            traces.
        gamma (float): Target SINR, ``>= 0``.
        sigma2 (float): Noise variance, ``> 0``.

    Returns:
        FeasibilityProblemSpec: The program and its variable layout.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    L, K, N = coefficients.shape
    n_nu = L * K * N
    nu_index = np.arange(n_nu).reshape(L, K, N)
    rho_index = np.full((L, K, L, N), -1, dtype=int)
    off_cell = np.array([[j, k, l] for j in range(L) for k in range(K)
                         for l in range(L) if l != j], dtype=int)
    off_cell = off_cell.reshape(-1, 3)
    n_rho = len(off_cell) * N
    if n_rho:
        rho_index[off_cell[:, 0], off_cell[:, 1], off_cell[:, 2]] = (
            n_nu + np.arange(n_rho).reshape(-1, N))
    n_vars = n_nu + n_rho
    root_gamma = np.sqrt(gamma)
    zeta = np.sqrt(np.clip(coefficients.zeta, 0.0, None))

    cones = []
    rows = n_nu + (L - 1) + 1
    for j, k in np.ndindex(L, K):
        entries = [(r, r, root_gamma * zeta[j, k].reshape(-1)[r])
                   for r in range(n_nu)]
        others = [l for l in range(L) if l != j]
        for offset, l in enumerate(others):
            entries += [(n_nu + offset, rho_index[j, k, l, n], root_gamma)
                        for n in range(N)]
        r, col, val = zip(*entries)
        A = sparse.csr_matrix((val, (r, col)), shape=(rows, n_vars))
        b = np.zeros(rows)
        b[-1] = root_gamma * np.sqrt(sigma2)
        c = np.zeros(n_vars)
        c[nu_index[j, k]] = coefficients.chi[j, k]
        cones.append(SocConstraint(A, b, c, 0.0, name=f"sinr[{j},{k}]"))
    for l in range(L):
        scale = np.sqrt(np.clip(coefficients.power_traces[l], 0.0, None))
        A = sparse.csr_matrix(
            (scale.ravel(), (np.arange(K * N), nu_index[l].ravel())),
            shape=(K * N, n_vars))
        cones.append(SocConstraint(A, np.zeros(K * N), np.zeros(n_vars), 1.0,
                                   name=f"power[{l}]"))

    # |xi| nu - rho <= 0, then -v <= 0
    link_rows, link_cols, link_vals, names = [], [], [], []
    for row, (j, k, l, n) in enumerate(
            (j, k, l, n) for j, k, l in off_cell for n in range(N)):
        link_rows += [row, row]
        link_cols += [nu_index[l, k, n], rho_index[j, k, l, n]]
        link_vals += [abs(coefficients.xi[j, k, l, n]), -1.0]
        names.append(f"link[{j},{k},{l},{n}]")
    link = sparse.csr_matrix((link_vals, (link_rows, link_cols)),
                             shape=(n_rho, n_vars))
    G = sparse.vstack([link, -sparse.identity(n_vars)], format="csr")
    h = np.zeros(n_rho + n_vars)
    names += [f"nonneg[{v}]" for v in range(n_vars)]
    var_names = ([f"nu[{l},{i},{n}]" for l, i, n in np.ndindex(L, K, N)]
                 + [f"rho[{j},{k},{l},{n}]"
                    for j, k, l in off_cell for n in range(N)])
    program = SocProgram(n_vars, cones, G, h, names, var_names)
    return FeasibilityProblemSpec(coefficients, float(gamma), float(sigma2),
                              nu_index, rho_index, program)


def _unit_power(coefficients: SinrCoefficients) -> np.ndarray:
    traces = coefficients.power_traces
    return np.broadcast_to(
        np.sqrt(1.0 / traces.sum(axis=(1, 2)))[:, None, None], traces.shape)


def maxmin_power(coefficients: SinrCoefficients,
                 estimation_set: EstimationSet, sigma2: float,
                 params: BisectionParams = BisectionParams(),
                 tol_feas: float = defaults.TOL_FEAS,
                 max_iters: int = defaults.SOLVER_MAX_ITERS
                 ) -> MaxMinResult:
    """Maximize the smallest SINR of the network by bisection.

    Every probe asks :func:`~daamimo.conic.solve_feasibility` whether all
    users can reach the midpoint of the bracket. The returned allocation
    is the witness of the last feasible probe.

    Args:
        coefficients (SinrCoefficients): chi, zeta, xi, power traces.
        estimation_set (EstimationSet): Used to check the result against
            the per-cell power constraint.
        sigma2 (float): Noise variance.
        params (BisectionParams): Bracket and stopping rule.
        tol_feas (float): Feasibility tolerance of the oracle.
        max_iters (int): Iteration limit of the oracle.

    Returns:
        MaxMinResult: Allocation, ``gamma_star`` and the bisection trace.

    Raises:
        BisectionError: If the oracle reports a numerical failure.
    """
    params.validate()
    lower = params.gamma_min
    upper = (params.gamma_max if params.gamma_max is not None
             else gamma_upper_bound(coefficients, sigma2))
    if lower > 0:
        problem = build_feasibility_problem(coefficients, lower, sigma2)
        initial = solve_feasibility(problem.program, tol_feas, max_iters)
        if not initial.feasible:
            raise ValueError(f"gamma_min={lower} is not feasible")
        witness = problem.allocation_from(initial.point)
    else:
        witness = PowerAllocation(_unit_power(coefficients))
    logger.info(f"Max-min bisection on [{lower:.6g}, {upper:.6g}]")

    trace: List[BisectionStep] = []
    while upper - lower > params.epsilon:
        if len(trace) >= params.max_iters:
            raise BisectionError("bisection iteration limit reached",
                                 lower, upper, trace)
        probe = (lower + upper) / 2
        problem = build_feasibility_problem(coefficients, probe, sigma2)
        result = solve_feasibility(problem.program, tol_feas, max_iters)
        trace.append(BisectionStep(len(trace) + 1, lower, upper, probe,
                                   result.status, result.max_violation))
        logger.debug(f"Probe {probe:.6g}: {result.status} "
                     f"({result.iterations} iterations)")
        if result.status == verdict.FEASIBLE:
            lower = probe
            witness = problem.allocation_from(result.point)
        elif result.status == verdict.INFEASIBLE:
            upper = probe
        else:
            raise BisectionError(
                f"feasibility oracle failed at gamma={probe:.6g}: "
                f"{result.message}", lower, upper, trace)

    check = verify_power_constraint(witness, estimation_set)
    if not check.passed:
        logger.warning(f"Max-min allocation exceeds the power constraint: "
                       f"{check.cell_powers.max():.12g}")
    logger.info(f"Max-min SINR {lower:.6g} after {len(trace)} probes")
    return MaxMinResult(allocation=witness, gamma_star=float(lower),
                        trace=trace)
