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
from eventsourcing.domain import Aggregate, event
from eventsourcing.application import Application
from uuid import UUID
from typing import Any, Dict, List
import logging
from daamimo.database import EngineManager


logger = logging.getLogger(__name__)

# -------------------- DOMAIN MODEL -------------------- #

# When updating Aggregate classes, take care of versioning for compatibility:
# Bump class_version and define @staticmethod upcast_vX_vY(state)


class SweepRun(Aggregate):
    """
    An experiment sweep over antennas per array and active arrays.

    Attributes:
        name (str): Name of the experiment.
        description (str): Free text describing the run.
        scenario (str): Source of the scenario file.
        schemes (list): Power allocation schemes evaluated per point.
        points (list): UUIDs of the sweep points.
        status (str): None until the run completes or fails.
    """
    INITIAL_VERSION = 0

    class SweepInitiated(Aggregate.Created):
        name: str
        description: str
        scenario: str
        schemes: List[str]

    @event(SweepInitiated)
    def __init__(self, name: str, description: str, scenario: str,
                 schemes: List[str]):
        self.name = name
        self.description = description
        self.scenario = scenario
        self.schemes = list(schemes)
        self.points = []
        self.status = None
        self.error_message = None

    class PointAdded(Aggregate.Event):
        point_id: UUID

    @event(PointAdded)
    def add_point(self, point_id: UUID):
        self.points.append(point_id)

    class SweepStarted(Aggregate.Event):
        pass

    @event(SweepStarted)
    def start_sweep(self):
        self.status = "RUNNING"

    class SweepCompleted(Aggregate.Event):
        pass

    @event(SweepCompleted)
    def complete_sweep(self):
        self.status = "DONE"

    class SweepFailed(Aggregate.Event):
        """
        Event triggered when the sweep aborts as a whole.

        Attributes:
            error_message (str): Why the sweep failed.
        """
        error_message: str

    @event(SweepFailed)
    def fail_sweep(self, error_message: str):
        self.status = "FAILED"
        self.error_message = error_message


class SweepPoint(Aggregate):
    """
    One (antennas, arrays, scheme) evaluation of a sweep.

    Attributes:
        sweep_id (UUID): The sweep this point belongs to.
        antennas (int): Antennas per array.
        arrays (int): Active arrays per cell.
        scheme (str): Power allocation scheme.
        seed (int): Seed derived for this point.
        steps (list): Recorded bisection steps.
        summary (dict): Aggregate results once completed.
    """
    INITIAL_VERSION = 0

    class PointCreated(Aggregate.Created):
        sweep_id: UUID
        antennas: int
        arrays: int
        scheme: str
        seed: int

    @event(PointCreated)
    def __init__(self, sweep_id: UUID, antennas: int, arrays: int,
                 scheme: str, seed: int):
        self.sweep_id = sweep_id
        self.antennas = antennas
        self.arrays = arrays
        self.scheme = scheme
        self.seed = seed
        self.steps = []
        self.summary = None
        self.error_message = None

    class BisectionStepRecorded(Aggregate.Event):
        iteration: int
        gamma_min: float
        gamma_max: float
        gamma_probe: float
        verdict: str

    @event(BisectionStepRecorded)
    def record_step(self, iteration: int, gamma_min: float, gamma_max: float,
                    gamma_probe: float, verdict: str):
        self.steps.append(dict(iteration=iteration, gamma_min=gamma_min,
                               gamma_max=gamma_max, gamma_probe=gamma_probe,
                               verdict=verdict))

    class PointCompleted(Aggregate.Event):
        summary: Dict[str, Any]

    @event(PointCompleted)
    def complete_point(self, summary: Dict[str, Any]):
        self.summary = summary

    class PointFailed(Aggregate.Event):
        error_message: str

    @event(PointFailed)
    def fail_point(self, error_message: str):
        self.error_message = error_message


# -------------------- APPLICATIONS -------------------- #

class NoOpExperimentTracker:
    """
    An experiment tracker whose every method call does nothing.

    Used when tracking is disabled, so the runner can call the tracker
    unconditionally.
    """
    def __getattr__(self, name):
        def no_op_function(*args, **kwargs):
            logger.debug(f"[No-op] Called function: {name} with args: "
                         f"{args}, kwargs: {kwargs}")
            return None

        return no_op_function


class ExperimentTracker(Application):
    """
    Application service recording the lifecycle of sweeps and their
    points.
    """

    def initiate_sweep(self, name: str, description: str, scenario: str,
                       schemes: List[str]) -> UUID:
        logger.debug(f"[EXT] Initiating sweep: name={name}, "
                     f"scenario={scenario}, schemes={schemes}")
        sweep = SweepRun(name, description, scenario, list(schemes))
        self.save(sweep)
        EngineManager.commit()
        return sweep.id

    def add_point_to_sweep(self, sweep_id: UUID, antennas: int, arrays: int,
                           scheme: str, seed: int) -> UUID:
        """
        Adds a point to the specified sweep.

        Args:
            sweep_id (UUID): The UUID of the sweep.
            antennas (int): Antennas per array.
            arrays (int): Active arrays per cell.
            scheme (str): Power allocation scheme.
            seed (int): Seed of the point.

        Returns:
            UUID: The UUID of the new point.
        """
        logger.debug(f"[EXT] Adding point to sweep: sweep_id={sweep_id}, "
                     f"M={antennas}, N={arrays}, scheme={scheme}")
        point = SweepPoint(sweep_id, int(antennas), int(arrays), scheme,
                           int(seed))
        self.save(point)
        EngineManager.commit()
        sweep: SweepRun = self.repository.get(sweep_id)
        sweep.add_point(point.id)
        self.save(sweep)
        EngineManager.commit()
        return point.id

    def start_sweep(self, sweep_id: UUID):
        logger.debug(f"[EXT] Starting sweep: sweep_id={sweep_id}")
        sweep: SweepRun = self.repository.get(sweep_id)
        sweep.start_sweep()
        self.save(sweep)
        EngineManager.commit()

    def complete_sweep(self, sweep_id: UUID):
        logger.debug(f"[EXT] Completing sweep: sweep_id={sweep_id}")
        sweep: SweepRun = self.repository.get(sweep_id)
        sweep.complete_sweep()
        self.save(sweep)
        EngineManager.commit()

    def fail_sweep(self, sweep_id: UUID, error_message: str):
        logger.debug(f"[EXT] Failing sweep: sweep_id={sweep_id}, "
                     f"error_message={error_message}")
        sweep: SweepRun = self.repository.get(sweep_id)
        sweep.fail_sweep(error_message)
        self.save(sweep)
        EngineManager.commit()

    def record_bisection_steps(self, point_id: UUID,
                               steps: List[Dict[str, Any]]):
        """
        Records the bisection trace of a max-min point.

        Args:
            point_id (UUID): The UUID of the point.
            steps (list): One dict per step with at least ``iteration``,
                ``gamma_min``, ``gamma_max``, ``gamma_probe`` and
                ``verdict``.
        """
        logger.debug(f"[EXT] Recording {len(steps)} bisection steps: "
                     f"point_id={point_id}")
        point: SweepPoint = self.repository.get(point_id)
        for step in steps:
            point.record_step(int(step["iteration"]),
                              float(step["gamma_min"]),
                              float(step["gamma_max"]),
                              float(step["gamma_probe"]),
                              str(step["verdict"]))
        self.save(point)
        EngineManager.commit()

    def complete_point(self, point_id: UUID, summary: Dict[str, Any]):
        logger.debug(f"[EXT] Completing point: point_id={point_id}, "
                     f"summary={summary}")
        point: SweepPoint = self.repository.get(point_id)
        point.complete_point(summary)
        self.save(point)
        EngineManager.commit()

    def fail_point(self, point_id: UUID, error_message: str):
        logger.debug(f"[EXT] Failing point: point_id={point_id}, "
                     f"error_message={error_message}")
        point: SweepPoint = self.repository.get(point_id)
        point.fail_point(error_message)
        self.save(point)
        EngineManager.commit()
