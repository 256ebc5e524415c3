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
"""Experiment sweeps over antennas per array and active arrays.

Every sweep point ``(M, N)`` rebuilds the covariances, the estimators and
the SINR coefficients, then evaluates each requested power allocation
scheme. Points run in a process pool and are gathered in input order.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import argparse
import configparser
import importlib.metadata
import itertools
import json
import logging
import os
import sys

import numpy as np
import pandas as pd
from eventsourcing.system import System, SingleThreadedRunner

from daamimo.constants import columns, defaults, scheme, sweep_status
from daamimo.covariance import build_covariance_set
from daamimo.database import EngineManager
from daamimo.estimation import build_estimation_set
from daamimo.eventsourcing import ExperimentTracker, NoOpExperimentTracker
from daamimo.power import (BisectionParams, equal_power, maxmin_power,
                           trace_frame, verify_power_constraint)
from daamimo.scenario import ScenarioFile, ScenarioLoader
from daamimo.sinr import (closed_form_sinr, compute_coefficients,
                          monte_carlo_sinr)
from daamimo.views import PointResults, SweepProgress

logger = logging.getLogger(__name__)


def code_version() -> str:
    try:
        return importlib.metadata.version("daamimo")
    except importlib.metadata.PackageNotFoundError:
        return "Version not found"


@dataclass(frozen=True)
class MonteCarloSpec:
    draws: int = 100_000
    seed: int = 0
    batch_size: int = defaults.MC_BATCH_SIZE


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run and where to write it.

    Attributes:
        sweep (tuple): ``(M, N)`` points, antennas per array and active
            arrays per cell.
        schemes (tuple): Subset of ``scheme.ALL``.
        scenario_path (str, optional): Scenario file; the packaged ring
            network if omitted.
        monte_carlo (MonteCarloSpec, optional): Cross-check every scheme
            by simulation.
        output_dir (str): Where :func:`export` writes.
        bisection (BisectionParams): Max-min bracket and stopping rule.
        seed (int): Master seed; point ``p`` derives its own from it.
        tol_feas (float): Feasibility tolerance of the conic solver.
        solver_max_iters (int): Iteration limit of the conic solver.
        workers (int): Process pool size; results do not depend on it.
        name (str): Label of the run.
    """
    sweep: Tuple[Tuple[int, int], ...]
    schemes: Tuple[str, ...] = scheme.ALL
    scenario_path: Optional[str] = None
    monte_carlo: Optional[MonteCarloSpec] = None
    output_dir: str = "results"
    bisection: BisectionParams = BisectionParams()
    seed: int = 0
    tol_feas: float = defaults.TOL_FEAS
    solver_max_iters: int = defaults.SOLVER_MAX_ITERS
    workers: int = 1
    name: str = "sweep"

    def __post_init__(self):
        object.__setattr__(self, "sweep", tuple(
            (int(m), int(n)) for m, n in self.sweep))
        object.__setattr__(self, "schemes", tuple(self.schemes))

    def validate(self):
        if not self.sweep:
            raise ValueError("sweep: at least one (M, N) point is required")
        if not self.schemes:
            raise ValueError("schemes: at least one scheme is required")
        unknown = set(self.schemes) - set(scheme.ALL)
        if unknown:
            raise ValueError(f"schemes: unknown {sorted(unknown)}")
        for m, n in self.sweep:
            if m < 1 or n < 1:
                raise ValueError(f"sweep: invalid point (M={m}, N={n})")
        if self.monte_carlo is not None and self.monte_carlo.draws < 2:
            raise ValueError("monte_carlo: draws must be at least 2")
        if self.workers < 1:
            raise ValueError("workers: must be at least 1")
        self.bisection.validate()

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["sweep"] = [list(point) for point in self.sweep]
        data["schemes"] = list(self.schemes)
        return data

    def point_seed(self, index: int) -> int:
        """Seed of sweep point ``index``, from the master seed."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(index,))
        return int(sequence.generate_state(1)[0])

    def monte_carlo_seed(self, point_seed: int) -> Optional[int]:
        """Seed of the channel draws at a point.

        The Monte Carlo seed spawned by the point seed, or ``None``
        without a Monte Carlo cross-check.
        """
        if self.monte_carlo is None:
            return None
        sequence = np.random.SeedSequence(self.monte_carlo.seed,
                                          spawn_key=(point_seed,))
        return int(sequence.generate_state(1)[0])


@dataclass
class PointResult:
    antennas: int
    arrays: int
    seed: int
    users: List[Dict[str, Any]] = field(default_factory=list)
    summary: List[Dict[str, Any]] = field(default_factory=list)
    cell_power: List[Dict[str, Any]] = field(default_factory=list)
    trace: Optional[pd.DataFrame] = None


@dataclass
class SweepResult:
    """Tables produced by :func:`run_sweep`."""
    spec: ExperimentSpec
    scenario_file: ScenarioFile
    users: pd.DataFrame
    summary: pd.DataFrame
    cell_power: pd.DataFrame
    traces: Dict[Tuple[int, int], pd.DataFrame]
    seeds: Dict[Tuple[int, int], int]

    @property
    def failed_points(self) -> int:
        return int((self.summary["status"] == sweep_status.FAILED).sum())

    def __len__(self) -> int:
        return len(self.summary)


def _summary_row(M, N, name, **values):
    row = {c: np.nan for c in columns.SUMMARY}
    row.update(kind="summary", antennas=M, arrays=N, scheme=name,
               bisection_iterations=0, status=sweep_status.DONE, error="")
    row.update(values)
    return row


def evaluate_point(scenario_file: ScenarioFile, antennas: int, arrays: int,
                   spec: ExperimentSpec, seed: int) -> PointResult:
    """Run every scheme of ``spec`` at one sweep point.

    Failures are recorded as FAILED summary rows rather than raised.
    """
    result = PointResult(antennas, arrays, seed)
    try:
        scenario = scenario_file.scenario.with_antennas(
            antennas).with_active_arrays(arrays)
        covariances = build_covariance_set(scenario, scenario_file.one_ring)
        estimation = build_estimation_set(covariances, scenario.rho_tr)
        coefficients = compute_coefficients(covariances, estimation)
    except (ValueError, ArithmeticError, RuntimeError) as e:
        logger.error(f"Point (M={antennas}, N={arrays}) failed: {e}")
        for name in spec.schemes:
            result.summary.append(_summary_row(
                antennas, arrays, name, status=sweep_status.FAILED,
                error=f"{type(e).__name__}: {e}"))
        return result

    for name in spec.schemes:
        try:
            gamma_star, iterations = np.nan, 0
            if name == scheme.MAXMIN:
                maxmin = maxmin_power(coefficients, estimation,
                                      scenario.sigma2, spec.bisection,
                                      spec.tol_feas, spec.solver_max_iters)
                allocation, gamma_star = maxmin
                iterations = maxmin.iterations
                result.trace = trace_frame(maxmin.trace)
            else:
                allocation = equal_power(estimation)
            report = closed_form_sinr(coefficients, allocation,
                                      scenario.sigma2, scenario.tau_c)
            check = verify_power_constraint(allocation, estimation)
            if not check.passed:
                logger.warning(f"{name} at (M={antennas}, N={arrays}) "
                               f"exceeds a cell budget: "
                               f"{check.cell_powers.max():.12g}")
            mc = None
            if spec.monte_carlo is not None:
                mc = monte_carlo_sinr(
                    covariances, estimation, allocation, scenario.sigma2,
                    spec.monte_carlo.draws, spec.monte_carlo_seed(seed),
                    scenario.tau_c, spec.monte_carlo.batch_size)
        except (ValueError, ArithmeticError, RuntimeError) as e:
            logger.error(f"{name} at (M={antennas}, N={arrays}) failed: {e}")
            result.summary.append(_summary_row(
                antennas, arrays, name, status=sweep_status.FAILED,
                error=f"{type(e).__name__}: {e}"))
            continue

        for (j, k), gamma in np.ndenumerate(report.gamma):
            row = {c: np.nan for c in columns.USER}
            row.update(kind="user", antennas=antennas, arrays=arrays,
                       scheme=name, cell=j, user=k, gamma=gamma,
                       se=report.se[j, k], status=sweep_status.DONE,
                       error="")
            if mc is not None:
                row.update(gamma_mc=mc.gamma[j, k],
                           gamma_mc_stderr=mc.gamma_stderr[j, k],
                           numerator_stderr=mc.numerator_stderr[j, k],
                           denominator_stderr=mc.denominator_stderr[j, k])
            result.users.append(row)
        for cell, power in enumerate(check.cell_powers):
            result.cell_power.append(dict(
                antennas=antennas, arrays=arrays, scheme=name, cell=cell,
                power=power, cell_se=report.cell_se[cell]))
        result.summary.append(_summary_row(
            antennas, arrays, name, sum_se=report.sum_se,
            min_se=report.min_se, gamma_star=gamma_star,
            max_cell_power=float(check.cell_powers.max()),
            power_ok=check.passed, bisection_iterations=iterations))
        logger.info(f"{name} at (M={antennas}, N={arrays}): sum SE "
                    f"{report.sum_se:.4f}, min SE {report.min_se:.4f}")

    _compare_schemes(result.summary)
    return result


def _compare_schemes(summary: List[Dict[str, Any]]):
    rows = {row["scheme"]: row for row in summary
            if row["status"] == sweep_status.DONE}
    if scheme.MAXMIN not in rows or scheme.EQUAL not in rows:
        return
    best, base = rows[scheme.MAXMIN]["sum_se"], rows[scheme.EQUAL]["sum_se"]
    gain = best - base
    rows[scheme.MAXMIN]["improvement_pct_of_maxmin"] = (
        100 * gain / best if best else np.nan)
    rows[scheme.MAXMIN]["improvement_pct_of_equal"] = (
        100 * gain / base if base else np.nan)


def _evaluate(args):
    return evaluate_point(*args)


def run_sweep(spec: ExperimentSpec,
              scenario_file: Optional[ScenarioFile] = None) -> SweepResult:
    """Evaluate every sweep point and scheme of ``spec``.

    Args:
        spec (ExperimentSpec): The experiment.
        scenario_file (ScenarioFile, optional): Preloaded scenario,
            otherwise ``spec.scenario_path`` is loaded.

    Returns:
        SweepResult: User, summary and per-cell tables plus bisection
        traces. Rows are ordered as the sweep and identical for identical
        ``spec``.

    Raises:
        ValueError: If ``spec`` or the scenario file is invalid.
    """
    spec.validate()
    if scenario_file is None:
        scenario_file = ScenarioLoader.load(spec.scenario_path)
    jobs = [(scenario_file, m, n, spec, spec.point_seed(index))
            for index, (m, n) in enumerate(spec.sweep)]
    logger.info(f"Running {len(jobs)} sweep points with "
                f"{spec.workers} worker(s)")
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            points = list(pool.map(_evaluate, jobs))
    else:
        points = [_evaluate(job) for job in jobs]

    def frame(rows, schema):
        return pd.DataFrame(rows, columns=schema)

    return SweepResult(
        spec=spec, scenario_file=scenario_file,
        users=frame([r for p in points for r in p.users], columns.USER),
        summary=frame([r for p in points for r in p.summary],
                      columns.SUMMARY),
        cell_power=frame([r for p in points for r in p.cell_power],
                         columns.CELL_POWER),
        traces={(p.antennas, p.arrays): p.trace for p in points
                if p.trace is not None},
        seeds={(p.antennas, p.arrays): p.seed for p in points})


def export(result: SweepResult, output_dir: Optional[str] = None,
           format: str = "csv") -> List[str]:
    """Write the result tables and a run manifest.

    Files are ``users.csv``, ``summary.csv``, ``cell_power.csv``, one
    ``trace_M<M>_N<N>.csv`` per max-min point and ``manifest.json``. The
    manifest carries the spec, seeds, tolerances, scenario digest and code
    version. Nothing time-dependent is written, so equal runs give
    byte-identical files.

    Returns:
        list: Paths written.

    Raises:
        ValueError: On an empty result or unsupported format.
        OSError: If the files cannot be written.
    """
    if format != "csv":
        raise ValueError(f"unsupported export format {format!r}")
    if not len(result):
        raise ValueError("nothing to export")
    output_dir = output_dir or result.spec.output_dir
    os.makedirs(output_dir, exist_ok=True)
    written = []

    def write(frame: pd.DataFrame, name: str):
        path = os.path.join(output_dir, name)
        frame.to_csv(path, index=False, float_format="%.12g")
        written.append(path)

    write(result.users, "users.csv")
    write(result.summary, "summary.csv")
    write(result.cell_power, "cell_power.csv")
    for (m, n), trace in sorted(result.traces.items()):
        write(trace, f"trace_M{m}_N{n}.csv")

    scenario = result.scenario_file.scenario
    manifest = {
        "name": result.spec.name,
        "code_version": code_version(),
        "spec": result.spec.to_dict(),
        "scenario": {"source": result.scenario_file.source,
                     "sha256": result.scenario_file.digest,
                     "L": scenario.L, "K": scenario.K, "N": scenario.N,
                     "M": scenario.M, "tau_c": scenario.tau_c,
                     "rho_tr": scenario.rho_tr, "sigma2": scenario.sigma2},
        "geometry": asdict(result.scenario_file.geometry),
        "one_ring": asdict(result.scenario_file.one_ring),
        "tolerances": {"tol_feas": result.spec.tol_feas,
                       "tol_psd": defaults.TOL_PSD,
                       "tol_imag": defaults.TOL_IMAG,
                       "quad_epsabs": defaults.QUAD_EPSABS,
                       "power_slack": defaults.POWER_SLACK},
        "seeds": [{"antennas": m, "arrays": n, "seed": seed,
                   "monte_carlo_seed": result.spec.monte_carlo_seed(seed)}
                  for (m, n), seed in result.seeds.items()],
        "files": [os.path.basename(p) for p in written],
    }
    path = os.path.join(output_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    written.append(path)
    logger.info(f"Wrote {len(written)} files to {output_dir}")
    return written


def check_result(result: SweepResult) -> List[str]:
    """Assertion-mode checks; returns one message per failed check.

    Every point must succeed, every max-min allocation must meet the
    per-cell budget and lift every user to within epsilon of its target,
    and Monte Carlo estimates must agree with the closed form within three
    standard errors.
    """
    failures = []
    epsilon = result.spec.bisection.epsilon
    for row in result.summary.itertuples():
        where = f"{row.scheme} at (M={row.antennas}, N={row.arrays})"
        if row.status != sweep_status.DONE:
            failures.append(f"{where}: {row.error}")
            continue
        if row.scheme != scheme.MAXMIN:
            continue
        if not row.power_ok:
            failures.append(f"{where}: cell power {row.max_cell_power}")
        users = result.users[(result.users.scheme == row.scheme)
                             & (result.users.antennas == row.antennas)
                             & (result.users.arrays == row.arrays)]
        if users.gamma.min() < row.gamma_star - epsilon:
            failures.append(f"{where}: min SINR {users.gamma.min():.6g} "
                            f"below {row.gamma_star:.6g}")
    if result.spec.monte_carlo is not None:
        users = result.users.dropna(subset=["gamma_mc"])
        gap = (users.gamma - users.gamma_mc).abs()
        bad = users[gap > 3 * users.gamma_mc_stderr]
        for row in bad.itertuples():
            failures.append(
                f"{row.scheme} at (M={row.antennas}, N={row.arrays}) user "
                f"{(row.cell, row.user)}: Monte Carlo {row.gamma_mc:.6g} "
                f"+- {row.gamma_mc_stderr:.3g} vs {row.gamma:.6g}")
    return failures


class ExperimentRunner:
    """Runs sweeps and records them for later analysis.

    With tracking enabled every sweep and point becomes an event-sourced
    aggregate, projected into SQL views by the enabled listeners.

    Example:
        with ExperimentRunner.from_config("daamimo-config.ini") as runner:
            result = runner.run(spec)

    Args:
        track_experiments (bool): Record sweeps as events. Requires
            ``sqlalchemy_url`` or the SQLALCHEMY_URL environment variable.
        enable_sweep_progress (bool): Maintain the sweep progress view.
        enable_point_results (bool): Maintain the point result view.
        sqlalchemy_url (str, optional): Database for events and views.
        tol_feas (float): Default feasibility tolerance for specs.
        solver_max_iters (int): Default conic iteration limit.
        epsilon (float): Default bisection width.
        mc_draws (int): Default Monte Carlo draws.
        mc_batch_size (int): Default Monte Carlo batch size.
        init_tracking (bool): Start the tracking system right away.
    """
    _DEFAULT_CONFIG_PATH_1 = "/etc/daamimo-config.ini"
    _DEFAULT_CONFIG_PATH_2 = "~/daamimo-config.ini"
    _DEFAULT_TRACK_EXPERIMENTS = False
    _DEFAULT_TOL_FEAS = defaults.TOL_FEAS
    _DEFAULT_SOLVER_MAX_ITERS = defaults.SOLVER_MAX_ITERS
    _DEFAULT_EPSILON = defaults.BISECTION_EPSILON
    _DEFAULT_MC_DRAWS = 100_000
    _DEFAULT_MC_BATCH_SIZE = defaults.MC_BATCH_SIZE

    def __init__(self,
                 track_experiments: bool = _DEFAULT_TRACK_EXPERIMENTS,
                 enable_sweep_progress: bool = True,
                 enable_point_results: bool = True,
                 sqlalchemy_url: Optional[str] = None,
                 tol_feas: float = _DEFAULT_TOL_FEAS,
                 solver_max_iters: int = _DEFAULT_SOLVER_MAX_ITERS,
                 epsilon: float = _DEFAULT_EPSILON,
                 mc_draws: int = _DEFAULT_MC_DRAWS,
                 mc_batch_size: int = _DEFAULT_MC_BATCH_SIZE,
                 init_tracking: bool = True):
        self.track_experiments = track_experiments
        self.enable_sweep_progress = enable_sweep_progress
        self.enable_point_results = enable_point_results
        self.sqlalchemy_url = sqlalchemy_url
        self.tol_feas = tol_feas
        self.solver_max_iters = solver_max_iters
        self.epsilon = epsilon
        self.mc_draws = mc_draws
        self.mc_batch_size = mc_batch_size
        self.runner = None
        self.experimentTracker = NoOpExperimentTracker()
        self.sweepProgress = NoOpExperimentTracker()
        self.pointResults = NoOpExperimentTracker()
        if init_tracking:
            self.initialize_tracking_system()

    @classmethod
    def from_config(cls, configfile: str = '',
                    init_tracking: bool = True) -> 'ExperimentRunner':
        """Creates a runner from configuration files (.ini).

        Defaults paths to look for config files are:
            - /etc/daamimo-config.ini
            - ~/daamimo-config.ini

        Args:
            configfile (str): The path to your configuration file. Optional.
            init_tracking (bool): Start the tracking system right away.

        Returns:
            ExperimentRunner: A new runner.
        """
        configs = configparser.ConfigParser(allow_no_value=True)
        # missing files are ok
        configs.read([os.path.expanduser(cls._DEFAULT_CONFIG_PATH_1),
                      os.path.expanduser(cls._DEFAULT_CONFIG_PATH_2),
                      os.path.expanduser(configfile)])

        track_experiments = configs.getboolean(
            "TRACKING", "track_experiments",
            fallback=cls._DEFAULT_TRACK_EXPERIMENTS)
        enable_sweep_progress = configs.getboolean(
            "TRACKING", "enable_sweep_progress", fallback=True)
        enable_point_results = configs.getboolean(
            "TRACKING", "enable_point_results", fallback=True)
        sqlalchemy_url = configs.get(
            "TRACKING", "sqlalchemy_url", fallback=None)

        return cls(track_experiments=track_experiments,
                   enable_sweep_progress=enable_sweep_progress,
                   enable_point_results=enable_point_results,
                   sqlalchemy_url=sqlalchemy_url,
                   tol_feas=configs.getfloat(
                       "SOLVER", "tol_feas", fallback=cls._DEFAULT_TOL_FEAS),
                   solver_max_iters=configs.getint(
                       "SOLVER", "max_iters",
                       fallback=cls._DEFAULT_SOLVER_MAX_ITERS),
                   epsilon=configs.getfloat(
                       "SOLVER", "epsilon", fallback=cls._DEFAULT_EPSILON),
                   mc_draws=configs.getint(
                       "MONTE_CARLO", "draws",
                       fallback=cls._DEFAULT_MC_DRAWS),
                   mc_batch_size=configs.getint(
                       "MONTE_CARLO", "batch_size",
                       fallback=cls._DEFAULT_MC_BATCH_SIZE),
                   init_tracking=init_tracking)

    def initialize_tracking_system(self):
        """Start the event-sourced tracking system, or no-op trackers when
        tracking is disabled.

        Raises:
            NotImplementedError: For a PERSISTENCE_MODULE other than
                eventsourcing_sqlalchemy.
            ValueError: If tracking is enabled without a database URL.
        """
        if not self.track_experiments:
            logger.warning("Tracking experiments is disabled. No-op "
                           "ExperimentTracker will be used.")
            return
        persistence_module = os.getenv("PERSISTENCE_MODULE",
                                       "eventsourcing_sqlalchemy")
        if persistence_module != "eventsourcing_sqlalchemy":
            raise NotImplementedError(
                f"Can't handle {persistence_module}. Currently only supports "
                f"'eventsourcing_sqlalchemy' as PERSISTENCE_MODULE")
        sqlalchemy_url = os.getenv("SQLALCHEMY_URL", self.sqlalchemy_url)
        if not sqlalchemy_url:
            raise ValueError("SQLALCHEMY_URL must be set either in init, "
                             "config ('sqlalchemy_url') or as an environment "
                             "variable.")
        if sqlalchemy_url != self.sqlalchemy_url:
            logger.info("Overriding configured SQLALCHEMY_URL with env var "
                        "SQLALCHEMY_URL.")

        pipes = []
        if self.enable_sweep_progress:
            pipes.append([ExperimentTracker, SweepProgress])
        if self.enable_point_results:
            pipes.append([ExperimentTracker, PointResults])
        if not pipes:
            pipes = [[ExperimentTracker]]
        system = System(pipes=pipes)
        scoped_session_topic = EngineManager.create_scoped_session(
            sqlalchemy_url=sqlalchemy_url)
        self.runner = SingleThreadedRunner(system, env={
            'SQLALCHEMY_SCOPED_SESSION_TOPIC': scoped_session_topic,
            'PERSISTENCE_MODULE': persistence_module})
        self.runner.start()
        self.experimentTracker = self.runner.get(ExperimentTracker)
        self.get_listeners(self.runner)

    def get_listeners(self, runner):
        if self.track_experiments and self.enable_sweep_progress:
            self.sweepProgress = runner.get(SweepProgress)
        else:
            self.sweepProgress = NoOpExperimentTracker()

        if self.track_experiments and self.enable_point_results:
            self.pointResults = runner.get(PointResults)
        else:
            self.pointResults = NoOpExperimentTracker()

    def make_spec(self, sweep: Sequence[Tuple[int, int]], **kwargs
                  ) -> ExperimentSpec:
        """An ExperimentSpec with this runner's configured defaults.

        ``monte_carlo_seed`` enables the Monte Carlo cross-check; other
        keyword arguments are passed to :class:`ExperimentSpec`.
        """
        mc_seed = kwargs.pop("monte_carlo_seed", None)
        mc_draws = kwargs.pop("monte_carlo_draws", self.mc_draws)
        if mc_seed is not None:
            kwargs["monte_carlo"] = MonteCarloSpec(
                draws=mc_draws, seed=mc_seed, batch_size=self.mc_batch_size)
        kwargs.setdefault("bisection", BisectionParams(epsilon=self.epsilon))
        kwargs.setdefault("tol_feas", self.tol_feas)
        kwargs.setdefault("solver_max_iters", self.solver_max_iters)
        return ExperimentSpec(sweep=tuple(sweep), **kwargs)

    def run(self, spec: ExperimentSpec) -> SweepResult:
        """Run a sweep, recording it with the experiment tracker."""
        spec.validate()
        scenario_file = ScenarioLoader.load(spec.scenario_path)
        sweep_id = self.experimentTracker.initiate_sweep(
            spec.name, f"{len(spec.sweep)} points",
            scenario_file.source, list(spec.schemes))
        point_ids = {}
        for index, (m, n) in enumerate(spec.sweep):
            for name in spec.schemes:
                point_ids[(m, n, name)] = \
                    self.experimentTracker.add_point_to_sweep(
                        sweep_id, m, n, name, spec.point_seed(index))
        self.experimentTracker.start_sweep(sweep_id)
        try:
            result = run_sweep(spec, scenario_file)
        except Exception as e:
            self.experimentTracker.fail_sweep(sweep_id, str(e))
            raise

        for row in result.summary.to_dict("records"):
            point_id = point_ids.get(
                (row["antennas"], row["arrays"], row["scheme"]))
            if row["status"] == sweep_status.FAILED:
                self.experimentTracker.fail_point(point_id, row["error"])
                continue
            trace = result.traces.get((row["antennas"], row["arrays"]))
            if row["scheme"] == scheme.MAXMIN and trace is not None:
                self.experimentTracker.record_bisection_steps(
                    point_id, trace.to_dict("records"))
            self.experimentTracker.complete_point(point_id, _plain(row))
        if result.failed_points:
            logger.warning(f"Sweep {spec.name}: {result.failed_points} "
                           f"point(s) failed")
        self.experimentTracker.complete_sweep(sweep_id)
        return result

    def close(self):
        if self.runner is not None:
            self.runner.stop()
            self.runner = None
        EngineManager.close_engine()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def _plain(row: Dict[str, Any]) -> Dict[str, Any]:
    """JSON-friendly copy of a summary row (no numpy scalars or NaN)."""
    plain = {}
    for key, value in row.items():
        if isinstance(value, (np.generic,)):
            value = value.item()
        if isinstance(value, float) and np.isnan(value):
            value = None
        plain[key] = value
    return plain


# ---------------------------- CLI ---------------------------- #


def parse_sweep(text: str) -> List[Tuple[int, int]]:
    """Parse ``"10x1,20x4"`` into ``[(10, 1), (20, 4)]``."""
    points = []
    for item in text.replace(" ", "").split(","):
        if not item:
            continue
        try:
            m, n = item.lower().split("x")
            points.append((int(m), int(n)))
        except ValueError:
            raise ValueError(f"sweep: cannot parse point {item!r}, "
                             f"expected MxN") from None
    return points


def read_sweep_file(path: str) -> List[Tuple[int, int]]:
    """Sweep points from an ``.ini`` file.

    The ``[SWEEP]`` section holds either ``points = 10x1, 20x4`` or the
    lists ``antennas`` and ``arrays``, whose Cartesian product is taken.
    """
    configs = configparser.ConfigParser(allow_no_value=True)
    if not configs.read(os.path.expanduser(path)):
        raise FileNotFoundError(path)
    points = configs.get("SWEEP", "points", fallback=None)
    if points:
        return parse_sweep(points)
    antennas = configs.get("SWEEP", "antennas", fallback="")
    arrays = configs.get("SWEEP", "arrays", fallback="")
    return [(int(m), int(n)) for m, n in itertools.product(
        antennas.replace(",", " ").split(), arrays.replace(",", " ").split())]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="daamimo",
        description="Downlink power control sweeps for multi-cell massive "
                    "MIMO with distributed antenna arrays.")
    parser.add_argument("--config", default="",
                        help="Runner configuration (.ini)")
    parser.add_argument("--scenario", default=None,
                        help="Scenario file (.ini); packaged network if "
                             "omitted")
    sweep = parser.add_mutually_exclusive_group()
    sweep.add_argument("--sweep", help="Inline points, e.g. 10x1,20x4")
    sweep.add_argument("--sweep-file", help="Sweep points file (.ini)")
    parser.add_argument("--antennas", type=int, nargs="+",
                        help="Antennas per array (with --arrays)")
    parser.add_argument("--arrays", type=int, nargs="+",
                        help="Active arrays per cell (with --antennas)")
    parser.add_argument("--schemes", nargs="+", default=list(scheme.ALL),
                        choices=scheme.ALL)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epsilon", type=float, default=None,
                        help="Bisection width in linear SINR")
    parser.add_argument("--mc-draws", type=int, default=None,
                        help="Monte Carlo cross-check with this many draws")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--output", default="results",
                        help="Output directory")
    parser.add_argument("--name", default="sweep")
    parser.add_argument("--assert", dest="assert_checks",
                        action="store_true",
                        help="Exit nonzero if any result check fails")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][
        min(args.verbose, 2)]
    logging.basicConfig(level=level,
                        format="%(asctime)s %(levelname)s %(name)s: "
                               "%(message)s")

    try:
        if args.sweep:
            sweep = parse_sweep(args.sweep)
        elif args.sweep_file:
            sweep = read_sweep_file(args.sweep_file)
        else:
            scenario = ScenarioLoader.load(args.scenario).scenario
            sweep = list(itertools.product(args.antennas or [scenario.M],
                                           args.arrays or [scenario.N]))
        with ExperimentRunner.from_config(args.config) as runner:
            options = dict(schemes=tuple(args.schemes),
                           scenario_path=args.scenario,
                           output_dir=args.output, seed=args.seed,
                           workers=args.workers, name=args.name)
            if args.epsilon is not None:
                options["bisection"] = BisectionParams(epsilon=args.epsilon)
            if args.mc_draws:
                options.update(monte_carlo_seed=args.seed,
                               monte_carlo_draws=args.mc_draws)
            spec = runner.make_spec(sweep, **options)
            result = runner.run(spec)
        export(result, args.output)
    except (ValueError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2

    if args.assert_checks:
        failures = check_result(result)
        for failure in failures:
            logger.error(f"Check failed: {failure}")
        if failures:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
