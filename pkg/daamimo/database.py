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
from eventsourcing.utils import get_topic, clear_topic_cache
import logging
from sqlalchemy import (create_engine, Column, Integer, BigInteger, String,
                        DateTime, Float, Boolean)
from sqlalchemy.orm import sessionmaker, declarative_base, scoped_session
from sqlalchemy.dialects.postgresql import UUID as PGUUID
import os

logger = logging.getLogger(__name__)

# --------------------- VIEWS DB tables/classes ---------------------------- #

Base = declarative_base()


class SweepProgressView(Base):
    """
    SQLAlchemy model for the 'daamimo_sweep_progress_view' table.

    Attributes:
        sweep_id (PGUUID): The unique identifier for the sweep.
        name (String): Name of the experiment.
        status (String): INITIALIZING, RUNNING, DONE or FAILED.
        progress (String): Share of finished points, e.g. "50%".
        points_total (Integer): Number of (M, N, scheme) points.
        points_done (Integer): Points completed or failed.
        start_time (DateTime): When the sweep was initiated.
    """
    __tablename__ = 'daamimo_sweep_progress_view'

    sweep_id = Column(PGUUID(as_uuid=True), primary_key=True)
    name = Column(String, nullable=True)
    status = Column(String, nullable=True)
    progress = Column(String, nullable=True)
    points_total = Column(Integer, nullable=False, default=0)
    points_done = Column(Integer, nullable=False, default=0)
    start_time = Column(DateTime, nullable=False)


class PointResultView(Base):
    """
    SQLAlchemy model for the 'daamimo_point_result_view' table.

    One row per sweep point: antennas per array, active arrays and
    power allocation scheme.
    """
    __tablename__ = 'daamimo_point_result_view'

    point_id = Column(PGUUID(as_uuid=True), primary_key=True)
    sweep_id = Column(PGUUID(as_uuid=True), nullable=False)
    antennas = Column(Integer, nullable=False)
    arrays = Column(Integer, nullable=False)
    scheme = Column(String, nullable=False)
    status = Column(String, nullable=False)
    sum_se = Column(Float, nullable=True)
    min_se = Column(Float, nullable=True)
    gamma_star = Column(Float, nullable=True)
    max_cell_power = Column(Float, nullable=True)
    power_ok = Column(Boolean, nullable=True)
    bisection_iterations = Column(Integer, nullable=False, default=0)
    seed = Column(BigInteger, nullable=True)
    error_message = Column(String, nullable=True)


class EngineManager:
    """
    Manages the SQLAlchemy engine and session lifecycle.

    Class Attributes:
        _engine: The SQLAlchemy engine used to connect to the database.
        _scoped_session_topic: The topic of the scoped session.
        _session: The scoped session used for database operations.
    """
    _engine = None
    _scoped_session_topic = None
    _session = None

    @classmethod
    def create_scoped_session(cls, sqlalchemy_url: str = None):
        """
        Creates and returns a scoped session for interacting with the
        database.

        Args:
            sqlalchemy_url (str, optional): The SQLAlchemy database URL.
                Defaults to the 'SQLALCHEMY_URL' environment variable.

        Returns:
            str: The topic of the scoped session adapter class.
        """
        if cls._engine is None:
            if not sqlalchemy_url:
                sqlalchemy_url = os.getenv('SQLALCHEMY_URL')
            if not sqlalchemy_url:
                raise ValueError("No SQLALCHEMY_URL configured for tracking")
            cls._engine = create_engine(sqlalchemy_url)

            # setup tables if they don't exist yet
            Base.metadata.create_all(cls._engine)

            cls._session = scoped_session(
                sessionmaker(autocommit=False, autoflush=True,
                             bind=cls._engine)
            )

            class ScopedSessionAdapter:
                def __getattribute__(self, item: str) -> None:
                    return getattr(cls._session, item)

            cls._scoped_session_topic = get_topic(ScopedSessionAdapter)
            logger.info("Created tracking database session")

        return cls._scoped_session_topic

    @classmethod
    def get_session(cls):
        return cls._session()

    @classmethod
    def commit(cls):
        cls._session.commit()

    @classmethod
    def close_engine(cls):
        """
        Disposes of the engine, removes the session and resets the class
        attributes.
        """
        if cls._engine is not None:
            cls._session.remove()
            cls._engine.dispose()
            cls._engine = None
            cls._session = None
            cls._scoped_session_topic = None
            clear_topic_cache()
