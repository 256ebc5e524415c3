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
from eventsourcing.system import ProcessApplication
from eventsourcing.dispatch import singledispatchmethod
import logging
from sqlalchemy.exc import IntegrityError
from daamimo.eventsourcing import SweepRun, SweepPoint
from daamimo.database import EngineManager, SweepProgressView, PointResultView
from daamimo.constants import sweep_status as sws

logger = logging.getLogger(__name__)


# ------------------- View Listener Applications ------------------ #


class SweepProgress(ProcessApplication):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)

        # {sweep_id: {"name", "status", "total", "done", "start_time"}}
        self.sweeps = {}
        self.points = {}  # {point_id: sweep_id}

    @singledispatchmethod
    def policy(self, domain_event, process_event):
        """Default policy"""

    @policy.register(SweepRun.SweepInitiated)
    def _(self, domain_event, process_event):
        sweep_id = domain_event.originator_id
        self.sweeps[sweep_id] = {"name": domain_event.name,
                                 "status": sws.INITIALIZING,
                                 "total": 0,
                                 "done": 0,
                                 "start_time": domain_event.timestamp}
        logger.debug(f"[SWP] Sweep initiated: sweep_id={sweep_id}")
        self.update_view_table(sweep_id)
        EngineManager.commit()

    @policy.register(SweepRun.PointAdded)
    def _(self, domain_event, process_event):
        sweep_id = domain_event.originator_id
        self.points[domain_event.point_id] = sweep_id
        if sweep_id in self.sweeps:
            self.sweeps[sweep_id]["total"] += 1
            self.update_view_table(sweep_id)
        EngineManager.commit()

    @policy.register(SweepRun.SweepStarted)
    def _(self, domain_event, process_event):
        sweep_id = domain_event.originator_id
        if sweep_id in self.sweeps:
            self.sweeps[sweep_id]["status"] = sws.RUNNING
            self.update_view_table(sweep_id)
        EngineManager.commit()

    @policy.register(SweepRun.SweepCompleted)
    def _(self, domain_event, process_event):
        sweep_id = domain_event.originator_id
        if sweep_id in self.sweeps:
            self.sweeps[sweep_id]["status"] = sws.DONE
            logger.debug(f"[SWP] Sweep done: sweep_id={sweep_id}")
            self.update_view_table(sweep_id)
        EngineManager.commit()

    @policy.register(SweepRun.SweepFailed)
    def _(self, domain_event, process_event):
        sweep_id = domain_event.originator_id
        if sweep_id in self.sweeps:
            self.sweeps[sweep_id]["status"] = sws.FAILED
            self.update_view_table(sweep_id)
        EngineManager.commit()

    @policy.register(SweepPoint.PointCompleted)
    def _(self, domain_event, process_event):
        self._point_finished(domain_event.originator_id)
        EngineManager.commit()

    @policy.register(SweepPoint.PointFailed)
    def _(self, domain_event, process_event):
        self._point_finished(domain_event.originator_id)
        EngineManager.commit()

    def _point_finished(self, point_id):
        sweep_id = self.points.get(point_id)
        if sweep_id in self.sweeps:
            self.sweeps[sweep_id]["done"] += 1
            self.update_view_table(sweep_id)
        else:
            logger.debug(f"[SWP] Ignoring point of unknown sweep: "
                         f"point_id={point_id}")

    def update_view_table(self, sweep_id):
        """Merge the current state of a sweep into the view table."""
        info = self.sweeps[sweep_id]
        total, done = info["total"], info["done"]
        progress = f"{int(100 * done / total)}%" if total else "0%"
        with EngineManager.get_session() as session:
            try:
                session.merge(SweepProgressView(
                    sweep_id=sweep_id,
                    name=info["name"],
                    status=info["status"],
                    progress=progress,
                    points_total=total,
                    points_done=done,
                    start_time=info["start_time"]))
                session.commit()
                logger.debug(f"[SWP] Updated view: sweep_id={sweep_id}, "
                             f"status={info['status']}, progress={progress}")
            except IntegrityError as e:
                session.rollback()
                logger.error(f"Failed to update sweep progress view: "
                             f"sweep_id={sweep_id}. Error {e}")


class PointResults(ProcessApplication):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.points = {}  # {point_id: row dict}

    @singledispatchmethod
    def policy(self, domain_event, process_event):
        """Default policy"""

    @policy.register(SweepPoint.PointCreated)
    def _(self, domain_event, process_event):
        point_id = domain_event.originator_id
        self.points[point_id] = {"sweep_id": domain_event.sweep_id,
                                 "antennas": domain_event.antennas,
                                 "arrays": domain_event.arrays,
                                 "scheme": domain_event.scheme,
                                 "seed": domain_event.seed,
                                 "status": sws.RUNNING,
                                 "bisection_iterations": 0}
        logger.debug(f"[PTR] Point created: point_id={point_id}")
        self.update_view_table(point_id)
        EngineManager.commit()

    @policy.register(SweepPoint.BisectionStepRecorded)
    def _(self, domain_event, process_event):
        point_id = domain_event.originator_id
        if point_id in self.points:
            self.points[point_id]["bisection_iterations"] += 1
        EngineManager.commit()

    @policy.register(SweepPoint.PointCompleted)
    def _(self, domain_event, process_event):
        point_id = domain_event.originator_id
        if point_id in self.points:
            row = self.points[point_id]
            row["status"] = sws.DONE
            for key in ("sum_se", "min_se", "gamma_star", "max_cell_power",
                        "power_ok"):
                row[key] = domain_event.summary.get(key)
            self.update_view_table(point_id)
        EngineManager.commit()

    @policy.register(SweepPoint.PointFailed)
    def _(self, domain_event, process_event):
        point_id = domain_event.originator_id
        if point_id in self.points:
            self.points[point_id]["status"] = sws.FAILED
            self.points[point_id]["error_message"] = \
                domain_event.error_message
            logger.debug(f"[PTR] Point failed: point_id={point_id}")
            self.update_view_table(point_id)
        EngineManager.commit()

    def update_view_table(self, point_id):
        with EngineManager.get_session() as session:
            try:
                session.merge(PointResultView(point_id=point_id,
                                              **self.points[point_id]))
                session.commit()
                logger.debug(f"[PTR] Updated view: point_id={point_id}, "
                             f"status={self.points[point_id]['status']}")
            except IntegrityError as e:
                session.rollback()
                logger.error(f"Failed to update point result view: "
                             f"point_id={point_id}. Error {e}")

    def get_results(self, sweep_id=None, scheme=None):
        """Retrieve finished point rows.

        Args:
            sweep_id (UUID, optional): Restrict to one sweep.
            scheme (str, optional): Restrict to one allocation scheme.

        Returns:
            list: ``(antennas, arrays, scheme, sum_se, min_se)`` tuples,
            ordered by antennas then arrays.
        """
        with EngineManager.get_session() as session:
            query = session.query(
                PointResultView.antennas, PointResultView.arrays,
                PointResultView.scheme, PointResultView.sum_se,
                PointResultView.min_se).filter(
                    PointResultView.status == sws.DONE)
            if sweep_id is not None:
                query = query.filter_by(sweep_id=sweep_id)
            if scheme is not None:
                query = query.filter_by(scheme=scheme)
            rows = query.order_by(PointResultView.antennas,
                                  PointResultView.arrays).all()
            logger.debug(f"Retrieved {len(rows)} point results for "
                         f"sweep_id={sweep_id}, scheme={scheme}")
            return [tuple(row) for row in rows]
