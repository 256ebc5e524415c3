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
"""Feasibility of second-order cone programs.

A program is a set of cones ``||A v + b|| <= c^T v + d`` plus linear rows
``G v <= h``. :func:`solve_feasibility` answers feasible / infeasible with
a witness, or reports a numerical failure. It never raises on a hard
problem.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence
import json
import logging

import cvxpy as cp
import numpy as np
from scipy import sparse

from daamimo.constants import defaults, verdict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SocConstraint:
    """``||A v + b||_2 <= c^T v + d``."""
    A: sparse.csr_matrix
    b: np.ndarray
    c: np.ndarray
    d: float
    name: str = ""

    def __post_init__(self):
        A = sparse.csr_matrix(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0] or A.shape[1] != c.shape[0]:
            raise ValueError(f"cone {self.name!r}: A is {A.shape}, b has "
                             f"{b.shape[0]} rows, c has {c.shape[0]} columns")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))

    def residual(self, point: np.ndarray) -> float:
        """``||A v + b|| - (c^T v + d)``; positive means violated."""
        return float(np.linalg.norm(self.A @ point + self.b)
                     - (self.c @ point + self.d))

    def scale(self) -> float:
        values = [np.abs(self.b).max(initial=0.0), np.abs(self.c).max(
            initial=0.0), abs(self.d)]
        if self.A.nnz:
            values.append(np.abs(self.A.data).max())
        return float(max(values))


@dataclass(frozen=True)
class SocProgram:
    """Cones and linear inequalities over ``n_vars`` real variables."""
    n_vars: int
    cones: Sequence[SocConstraint]
    G: Optional[sparse.csr_matrix] = None
    h: Optional[np.ndarray] = None
    linear_names: Optional[Sequence[str]] = None
    var_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        G = sparse.csr_matrix((0, self.n_vars)) if self.G is None else (
            sparse.csr_matrix(self.G, dtype=float))
        h = np.zeros(0) if self.h is None else np.asarray(self.h, float)
        if G.shape != (h.shape[0], self.n_vars):
            raise ValueError(f"G is {G.shape} for {h.shape[0]} rows and "
                             f"{self.n_vars} variables")
        for cone in self.cones:
            if cone.A.shape[1] != self.n_vars:
                raise ValueError(f"cone {cone.name!r} has {cone.A.shape[1]}"
                                 f" columns, expected {self.n_vars}")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "cones", tuple(self.cones))

    def cone_residuals(self, point: np.ndarray) -> np.ndarray:
        return np.array([cone.residual(point) for cone in self.cones])

    def linear_residuals(self, point: np.ndarray) -> np.ndarray:
        return self.G @ point - self.h

    def max_violation(self, point: np.ndarray) -> float:
        """Largest violation of any constraint at ``point``, ``>= 0``."""
        point = np.asarray(point, dtype=float)
        residuals = np.concatenate([self.cone_residuals(point),
                                    self.linear_residuals(point)])
        return float(max(residuals.max(initial=0.0), 0.0))

    def normalized(self) -> "SocProgram":
        """The same feasible set with every constraint scaled so that its
        largest coefficient has magnitude one.
        """
        cones = []
        for cone in self.cones:
            s = cone.scale() or 1.0
            cones.append(SocConstraint(cone.A / s, cone.b / s, cone.c / s,
                                       cone.d / s, cone.name))
        row_scale = np.maximum(abs(self.G).max(axis=1).toarray().ravel(),
                               np.abs(self.h)) if self.h.size else np.ones(0)
        row_scale[row_scale == 0] = 1.0
        scaling = sparse.diags(1.0 / row_scale)
        return SocProgram(self.n_vars, cones, scaling @ self.G,
                          self.h / row_scale, self.linear_names,
                          self.var_names)

    def dump(self, path: str):
        """Write the program as JSON lines, one constraint per line.

        Cone lines hold ``A`` as ``[row, col, value]`` triplets, ``b``,
        ``c`` as ``[col, value]`` pairs and ``d``. Linear lines hold one
        row of ``G`` and its bound ``h``.
        """
        with open(path, "w") as f:
            f.write(json.dumps({"kind": "header", "n_vars": self.n_vars,
                                "var_names": list(self.var_names or [])})
                    + "\n")
            for cone in self.cones:
                A = cone.A.tocoo()
                nz = np.flatnonzero(cone.c)
                f.write(json.dumps({
                    "kind": "soc", "name": cone.name,
                    "A": [[int(r), int(k), float(v)]
                          for r, k, v in zip(A.row, A.col, A.data)],
                    "b": cone.b.tolist(),
                    "c": [[int(k), float(cone.c[k])] for k in nz],
                    "d": cone.d}) + "\n")
            names = self.linear_names or [f"row{r}" for r in
                                          range(self.G.shape[0])]
            for r in range(self.G.shape[0]):
                row = self.G.getrow(r).tocoo()
                f.write(json.dumps({
                    "kind": "linear", "name": names[r],
                    "G": [[int(k), float(v)]
                          for k, v in zip(row.col, row.data)],
                    "h": float(self.h[r])}) + "\n")
        logger.info(f"Dumped program with {len(self.cones)} cones and "
                    f"{self.G.shape[0]} linear rows to {path}")


@dataclass
class FeasibilityVerdict:
    """Outcome of :func:`solve_feasibility`.

    Attributes:
        status (str): One of ``verdict.FEASIBLE``, ``verdict.INFEASIBLE``
            or ``verdict.NUMERICAL_FAILURE``.
        point (np.ndarray, optional): Witness when feasible.
        max_violation (float): Normalized violation of the witness, or of
            the last iterate.
        slack (float): Optimal phase-I slack, ``nan`` if unknown.
        iterations (int): Interior-point iterations.
        message (str): Solver status text; on a numerical failure also
            the achieved slack and violation.
        diagnostics (dict): Solver status, slack, violation and
            iterations of a numerical failure.
    """
    status: str
    point: Optional[np.ndarray] = None
    max_violation: float = float("nan")
    slack: float = float("nan")
    iterations: int = 0
    message: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == verdict.FEASIBLE


_INFEASIBLE = (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE)


def solve_feasibility(program: SocProgram, tol_feas: float = defaults.TOL_FEAS,
                      max_iters: int = defaults.SOLVER_MAX_ITERS,
                      solver: str = cp.CLARABEL) -> FeasibilityVerdict:
    """Decide whether a program has a point satisfying every constraint.

    Solves the phase-I problem ``min s`` with every cone relaxed to
    ``||A v + b|| <= c^T v + d + s`` and ``s >= -1``, on the normalized
    program. A point is reported feasible only after re-checking it
    against the unrelaxed constraints.

    Args:
        program (SocProgram): The constraints.
        tol_feas (float): Largest accepted normalized violation.
        max_iters (int): Interior-point iteration limit.
        solver (str): cvxpy solver name.

    Returns:
        FeasibilityVerdict: The verdict and, when feasible, a witness.
    """
    scaled = program.normalized()
    v = cp.Variable(scaled.n_vars)
    s = cp.Variable()
    constraints: List[cp.constraints.Constraint] = [
        cp.SOC(cone.c @ v + cone.d + s, cp.Constant(cone.A) @ v + cone.b)
        for cone in scaled.cones]
    if scaled.G.shape[0]:
        constraints.append(cp.Constant(scaled.G) @ v <= scaled.h)
    constraints.append(s >= -1)
    problem = cp.Problem(cp.Minimize(s), constraints)

    options = {"max_iter": max_iters}
    if solver == cp.CLARABEL:
        options.update(tol_gap_abs=tol_feas / 10, tol_gap_rel=tol_feas / 10)
    try:
        problem.solve(solver=solver, verbose=False, **options)
    except cp.error.SolverError as e:
        logger.warning(f"Conic solver failed: {e}")
        return FeasibilityVerdict(verdict.NUMERICAL_FAILURE, message=str(e))

    stats = problem.solver_stats
    iterations = int(stats.num_iters or 0) if stats else 0
    status = problem.status
    if status in _INFEASIBLE:
        # the hard linear rows alone are infeasible
        return FeasibilityVerdict(verdict.INFEASIBLE, iterations=iterations,
                                  message=status)
    point = None if v.value is None else np.asarray(v.value, dtype=float)
    slack = float("nan") if s.value is None else float(s.value)
    violation = float("nan") if point is None else scaled.max_violation(point)
    logger.debug(f"Phase-I status {status}: slack {slack:.3e}, "
                 f"violation {violation:.3e}, {iterations} iterations")

    if point is not None and violation <= tol_feas:
        return FeasibilityVerdict(verdict.FEASIBLE, point, violation, slack,
                                  iterations, status)
    if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) and slack > tol_feas:
        return FeasibilityVerdict(verdict.INFEASIBLE, None, violation, slack,
                                  iterations, status)
    return FeasibilityVerdict(
        verdict.NUMERICAL_FAILURE, point, violation, slack, iterations,
        f"{status}: slack {slack:.3e}, violation {violation:.3e} "
        f"(tolerance {tol_feas:.1e})",
        {"solver_status": status, "slack": slack, "violation": violation,
         "iterations": iterations})
