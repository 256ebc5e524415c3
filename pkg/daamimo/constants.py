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
"""This module defines constants shared by the daamimo modules"""

SCENARIO_RESOURCE = "ring-network.ini"


class scheme:
    # ------------------------------------------------------------
    # Power allocation schemes
    # ------------------------------------------------------------
    EQUAL = "equal"
    MAXMIN = "maxmin"
    ALL = (EQUAL, MAXMIN)


class verdict:
    # ------------------------------------------------------------
    # Feasibility verdicts of the conic solver
    # ------------------------------------------------------------
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical-failure"


class sweep_status:
    INITIALIZING = "INITIALIZING"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"


class defaults:
    # ------------------------------------------------------------
    # Numerical defaults
    # ------------------------------------------------------------
    TOL_PSD = 1e-10            # relative to the trace
    TOL_IMAG = 1e-10           # relative imaginary residual of traces
    TOL_FEAS = 1e-7
    SOLVER_MAX_ITERS = 200
    BISECTION_EPSILON = 1e-3
    BISECTION_MAX_ITERS = 100
    POWER_SLACK = 1e-9
    QUAD_EPSABS = 1e-10
    QUAD_FALLBACK_PANELS = 4096
    MC_BATCH_SIZE = 5000
    MC_MIN_DRAWS = 1000        # fewer draws run with a warning


class columns:
    # ------------------------------------------------------------
    # CSV schemas
    # ------------------------------------------------------------
    USER = ["kind", "antennas", "arrays", "scheme", "cell", "user",
            "gamma", "se", "gamma_mc", "gamma_mc_stderr",
            "numerator_stderr", "denominator_stderr", "status", "error"]
    SUMMARY = ["kind", "antennas", "arrays", "scheme", "sum_se", "min_se",
               "gamma_star", "max_cell_power", "power_ok",
               "bisection_iterations", "improvement_pct_of_maxmin",
               "improvement_pct_of_equal", "status", "error"]
    CELL_POWER = ["antennas", "arrays", "scheme", "cell", "power", "cell_se"]
    TRACE = ["iteration", "gamma_min", "gamma_max", "gamma_probe", "verdict",
             "max_violation"]
    REPORT = ["cell", "user", "gamma", "se"]
    REPORT_MC = REPORT + ["gamma_stderr", "numerator_stderr",
                          "denominator_stderr"]
