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
"""Network geometry and system-level parameters.

The network is a tiling of hexagonal cells. Every cell has a base station
made of ``N`` distributed antenna arrays (DAAs) of ``M`` antennas each and
serves ``K`` single-antenna users. Array broadside points at the array's own
cell center, and azimuths are measured counterclockwise from broadside.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple
import configparser
import hashlib
import logging
import math
import os
import re

import numpy as np
from importlib_resources import files

from daamimo.constants import SCENARIO_RESOURCE
from daamimo.covariance import OneRingParams

logger = logging.getLogger(__name__)

_SQRT3 = math.sqrt(3.0)


class ScenarioConfigError(ValueError):
    """A scenario (file) violates an invariant.

    Attributes:
        field (str): Name of the first violated field.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class SystemScalars:
    """Scalar system parameters shared by every cell.

    Attributes:
        tau_c (int): Coherence interval in samples.
        rho_tr (float): Normalized total pilot power (``rho_p * tau_p``).
        sigma2 (float): Downlink noise variance (normalized).
    """
    tau_c: int = 200
    rho_tr: float = 10.0
    sigma2: float = 1.0


@dataclass(frozen=True)
class GeometryParams:
    """Ring layout of arrays and users around each cell center.

    Attributes:
        array_ring_radius (float): Distance of the arrays from the cell
            center in meters.
        user_ring_radius (float): Distance of the users from the cell
            center in meters.
        cell_radius (float, optional): Hexagon circumradius in meters.
            Defaults to the value whose inradius equals
            ``user_ring_radius``, so every user lies inside its cell.
        layout (str): Cell tiling. Only ``"hexagonal"`` is supported.
    """
    array_ring_radius: float = 300.0
    user_ring_radius: float = 700.0
    cell_radius: Optional[float] = None
    layout: str = "hexagonal"

    @property
    def hexagon_radius(self) -> float:
        if self.cell_radius is not None:
            return float(self.cell_radius)
        return 2.0 * self.user_ring_radius / _SQRT3

    def validate(self):
        if self.layout != "hexagonal":
            raise ScenarioConfigError(
                "layout", f"unsupported tiling {self.layout!r}")
        if not self.array_ring_radius > 0:
            raise ScenarioConfigError(
                "array_ring_radius", "must be positive")
        if not self.user_ring_radius > 0:
            raise ScenarioConfigError(
                "user_ring_radius", "must be positive")
        if not self.array_ring_radius < self.user_ring_radius:
            raise ScenarioConfigError(
                "array_ring_radius", "must be smaller than user_ring_radius")
        inradius = self.hexagon_radius * _SQRT3 / 2.0
        if self.user_ring_radius > inradius * (1 + 1e-12):
            raise ScenarioConfigError(
                "cell_radius",
                f"user ring {self.user_ring_radius} m exceeds the cell "
                f"inradius {inradius:.3f} m")


def hexagon_centers(count: int, radius: float) -> np.ndarray:
    """Centers of ``count`` flat-topped hexagons spiralling out from the
    origin, ring by ring.

    Neighbouring centers are ``sqrt(3) * radius`` apart.
    """
    directions = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)]
    axial = [(0, 0)]
    ring = 1
    while len(axial) < count:
        q, r = -ring, ring  # start at ring * direction[4]
        for dq, dr in directions:
            for _ in range(ring):
                axial.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    axial = np.array(axial[:count], dtype=float)
    x = radius * 1.5 * axial[:, 0]
    y = radius * _SQRT3 * (axial[:, 1] + axial[:, 0] / 2.0)
    return np.stack([x, y], axis=-1)


def inside_hexagon(points: np.ndarray, center: np.ndarray, radius: float,
                   tol: float = 1e-9) -> np.ndarray:
    """Whether points lie inside (or on) a flat-topped hexagon."""
    rel = np.abs(np.asarray(points, dtype=float) - center)
    slack = tol * radius
    return ((rel[..., 1] <= _SQRT3 / 2.0 * radius + slack)
            & (_SQRT3 * rel[..., 0] + rel[..., 1] <= _SQRT3 * radius + slack))


def _ring(center: np.ndarray, radius: float, count: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(count) / count
    return center + radius * np.stack([np.cos(angles), np.sin(angles)], -1)


def _wrap(angle):
    """Wrap to (-pi, pi]."""
    wrapped = np.arctan2(np.sin(angle), np.cos(angle))
    return np.where(wrapped <= -np.pi, np.pi, wrapped)


@dataclass(frozen=True)
class NetworkScenario:
    """Immutable description of the whole network.

    Position arrays are read-only. Indexing is ``array_positions[j, n]``
    for array ``n`` of cell ``j`` and ``user_positions[l, i]`` for user
    ``i`` of cell ``l``.
    """
    L: int
    K: int
    N: int
    M: int
    tau_c: int
    rho_tr: float
    sigma2: float
    cell_radius: float
    cell_centers: np.ndarray
    array_positions: np.ndarray
    user_positions: np.ndarray
    tau_p: int = field(default=None)

    def __post_init__(self):
        if self.tau_p is None:
            object.__setattr__(self, "tau_p", self.K)
        for name in ("cell_centers", "array_positions", "user_positions"):
            value = np.array(getattr(self, name), dtype=float)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        self.validate()

    def validate(self):
        for name in ("L", "K", "N", "M"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ScenarioConfigError(name, "must be an integer >= 1")
        if self.tau_p != self.K:
            raise ScenarioConfigError(
                "tau_p", "orthogonal pilots require tau_p == K")
        if not self.tau_c > self.K:
            raise ScenarioConfigError("tau_c", "must exceed K")
        if not self.rho_tr > 0:
            raise ScenarioConfigError("rho_tr", "must be positive")
        if not self.sigma2 > 0:
            raise ScenarioConfigError("sigma2", "must be positive")
        if not self.cell_radius > 0:
            raise ScenarioConfigError("cell_radius", "must be positive")
        if self.cell_centers.shape != (self.L, 2):
            raise ScenarioConfigError("cell_centers", "expected shape (L, 2)")
        if self.array_positions.shape != (self.L, self.N, 2):
            raise ScenarioConfigError(
                "array_positions", "expected shape (L, N, 2)")
        if self.user_positions.shape != (self.L, self.K, 2):
            raise ScenarioConfigError(
                "user_positions", "expected shape (L, K, 2)")
        for j in range(self.L):
            center = self.cell_centers[j]
            if not inside_hexagon(self.array_positions[j], center,
                                  self.cell_radius).all():
                raise ScenarioConfigError(
                    "array_positions", f"array outside cell {j}")
            if not inside_hexagon(self.user_positions[j], center,
                                  self.cell_radius).all():
                raise ScenarioConfigError(
                    "user_positions", f"user outside cell {j}")
            if np.any(np.linalg.norm(
                    self.array_positions[j] - center, axis=-1) == 0):
                raise ScenarioConfigError(
                    "array_positions",
                    f"array at the center of cell {j} has no broadside")
        if np.any(self.pair_geometry()[0] == 0):
            raise ScenarioConfigError(
                "user_positions", "user coincides with an array")

    @property
    def array_count(self) -> int:
        return self.L * self.N

    @property
    def user_count(self) -> int:
        return self.L * self.K

    def broadside(self, j: int, n: int) -> np.ndarray:
        """Unit vector from array ``(j, n)`` towards its cell center."""
        vector = self.cell_centers[j] - self.array_positions[j, n]
        return vector / np.linalg.norm(vector)

    def geometry_of(self, j: int, n: int, l: int, i: int
                    ) -> Tuple[float, float]:
        """Distance and azimuth from array ``(j, n)`` to user ``(l, i)``.

        Args:
            j (int): Cell of the array.
            n (int): Array index within cell ``j``.
            l (int): Cell of the user.
            i (int): User index within cell ``l``.

        Returns:
            tuple: ``(distance, azimuth)`` in meters and radians. The
            azimuth is counterclockwise from the array's broadside and
            wrapped to (-pi, pi]; a user to the right of broadside gets a
            negative azimuth.

        Raises:
            IndexError: If an index is out of range.
        """
        for name, value, bound in (("j", j, self.L), ("n", n, self.N),
                                   ("l", l, self.L), ("i", i, self.K)):
            if not 0 <= value < bound:
                raise IndexError(f"{name}={value} out of range [0, {bound})")
        delta = self.user_positions[l, i] - self.array_positions[j, n]
        axis = self.broadside(j, n)
        cross = axis[0] * delta[1] - axis[1] * delta[0]
        dot = axis @ delta
        return float(np.hypot(*delta)), float(_wrap(np.arctan2(cross, dot)))

    def pair_geometry(self) -> Tuple[np.ndarray, np.ndarray]:
        """Distances and azimuths of every (user, array) pair.

        Returns:
            tuple: Two arrays of shape ``(L, K, L, N)`` indexed
            ``[l, i, j, n]`` (user ``(l, i)``, array ``(j, n)``).
        """
        users = self.user_positions[:, :, None, None, :]
        arrays = self.array_positions[None, None, :, :, :]
        delta = users - arrays
        axis = self.cell_centers[:, None, :] - self.array_positions
        axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
        axis = axis[None, None]
        cross = axis[..., 0] * delta[..., 1] - axis[..., 1] * delta[..., 0]
        dot = (axis * delta).sum(-1)
        return np.hypot(delta[..., 0], delta[..., 1]), _wrap(
            np.arctan2(cross, dot))

    def with_active_arrays(self, count: int) -> "NetworkScenario":
        """Keep the first ``count`` arrays of every cell.

        Arrays are stored counterclockwise starting from the one nearest
        bearing 0 deg from the cell center, so this realizes "all arrays
        marked ``count`` or lower are active".
        """
        if not 1 <= count <= self.N:
            raise ValueError(f"cannot activate {count} of {self.N} arrays")
        return replace(self, N=count,
                       array_positions=self.array_positions[:, :count])

    def with_antennas(self, count: int) -> "NetworkScenario":
        return replace(self, M=int(count))


def geometry_of(scenario: NetworkScenario, j: int, n: int, l: int, i: int
                ) -> Tuple[float, float]:
    """Distance and azimuth from array ``(j, n)`` to user ``(l, i)``.

    See :meth:`NetworkScenario.geometry_of`.
    """
    return scenario.geometry_of(j, n, l, i)


def build_ring_network(params: GeometryParams, L: int, K: int, N: int,
                        M: int, scalars: SystemScalars = SystemScalars()
                        ) -> NetworkScenario:
    """Build the ring layout: equally spaced arrays and users on two rings
    around every cell center of a hexagonal tiling.

    Angles start at bearing 0 (the +x axis) and go counterclockwise. The
    construction is deterministic.

    Args:
        params (GeometryParams): Ring radii and cell size.
        L (int): Number of cells.
        K (int): Users per cell.
        N (int): Arrays per cell.
        M (int): Antennas per array.
        scalars (SystemScalars): Coherence interval, pilot power, noise.

    Returns:
        NetworkScenario: The constructed network.

    Raises:
        ScenarioConfigError: On nonpositive radii or invalid counts.
    """
    params.validate()
    if int(L) != L or L < 1:
        raise ScenarioConfigError("L", "must be an integer >= 1")
    radius = params.hexagon_radius
    centers = hexagon_centers(L, radius)
    arrays = np.stack([_ring(c, params.array_ring_radius, N)
                       for c in centers])
    users = np.stack([_ring(c, params.user_ring_radius, K)
                      for c in centers])
    scenario = NetworkScenario(
        L=L, K=K, N=N, M=M, tau_c=scalars.tau_c, rho_tr=scalars.rho_tr,
        sigma2=scalars.sigma2, cell_radius=radius, cell_centers=centers,
        array_positions=arrays, user_positions=users)
    logger.info(f"Built {L}-cell ring network: {L * N} arrays, "
                f"{L * K} users, M={M}")
    return scenario


def build_custom_network(cell_centers: Sequence, array_positions: Sequence,
                         user_positions: Sequence, M: int, cell_radius: float,
                         scalars: SystemScalars = SystemScalars()
                         ) -> NetworkScenario:
    """Build a network from explicit array and user coordinates.

    Args:
        cell_centers: ``(L, 2)`` coordinates of the cell centers.
        array_positions: ``(L, N, 2)`` array coordinates.
        user_positions: ``(L, K, 2)`` user coordinates.
        M (int): Antennas per array.
        cell_radius (float): Hexagon circumradius in meters.
        scalars (SystemScalars): Coherence interval, pilot power, noise.

    Returns:
        NetworkScenario: The network, validated.
    """
    arrays = np.asarray(array_positions, dtype=float)
    users = np.asarray(user_positions, dtype=float)
    if arrays.ndim != 3 or users.ndim != 3:
        raise ScenarioConfigError(
            "array_positions", "expected (L, N, 2) and (L, K, 2) coordinates")
    return NetworkScenario(
        L=arrays.shape[0], K=users.shape[1], N=arrays.shape[1], M=M,
        tau_c=scalars.tau_c, rho_tr=scalars.rho_tr, sigma2=scalars.sigma2,
        cell_radius=cell_radius, cell_centers=cell_centers,
        array_positions=arrays, user_positions=users)


def build_cell_free_network(ap_positions: Sequence, user_positions: Sequence,
                            cell_radius: float,
                            scalars: SystemScalars = SystemScalars()
                            ) -> NetworkScenario:
    """Single cell of single-antenna access points (``L = 1``, ``M = 1``)."""
    return build_custom_network(
        cell_centers=[[0.0, 0.0]],
        array_positions=[np.asarray(ap_positions, dtype=float)],
        user_positions=[np.asarray(user_positions, dtype=float)],
        M=1, cell_radius=cell_radius, scalars=scalars)


@dataclass(frozen=True)
class ScenarioFile:
    """Everything a scenario file carries."""
    scenario: NetworkScenario
    geometry: GeometryParams
    one_ring: OneRingParams
    source: str
    digest: str = ""


class ScenarioLoader:
    """Reads scenario ``.ini`` files.

    Sections are ``[NETWORK]``, ``[GEOMETRY]``, ``[ONE_RING]`` and an
    optional ``[POSITIONS]`` holding ``array.<cell>.<n> = x, y`` and
    ``user.<cell>.<i> = x, y`` entries. Without ``[POSITIONS]`` the ring
    layout of :func:`build_ring_network` is used.

    Example:
        scenario_file = ScenarioLoader.load("my-network.ini")
        scenario = scenario_file.scenario
    """
    _DEFAULT_CELLS = 7
    _DEFAULT_USERS = 10
    _DEFAULT_ARRAYS = 4
    _DEFAULT_ANTENNAS = 20
    _DEFAULT_TAU_C = 200
    _DEFAULT_PILOT_POWER = 10.0
    _DEFAULT_NOISE = 1.0
    _DEFAULT_ARRAY_RING = 300.0
    _DEFAULT_USER_RING = 700.0
    _DEFAULT_SPREAD_DEG = 10.0
    _DEFAULT_SPACING = 0.5
    _DEFAULT_EXPONENT = 3.76
    _DEFAULT_EDGE_SNR_DB = 0.0
    _POSITION_KEY = re.compile(r"(array|user)\.(\d+)\.(\d+)$")

    @classmethod
    def load(cls, configfile: Optional[str] = None) -> ScenarioFile:
        """Load a scenario file, or the packaged ring network if omitted.

        Args:
            configfile (str, optional): Path to the ``.ini`` file.

        Returns:
            ScenarioFile: The validated scenario and its model parameters.

        Raises:
            ScenarioConfigError: Naming the first violated field.
            FileNotFoundError: If ``configfile`` does not exist.
        """
        configs = configparser.ConfigParser(allow_no_value=True)
        if configfile:
            path = os.path.expanduser(configfile)
            if not os.path.exists(path):
                raise FileNotFoundError(path)
            with open(path, "r") as f:
                text = f.read()
            source = path
        else:
            resource = files("resources").joinpath(SCENARIO_RESOURCE)
            with resource.open("r") as f:
                text = f.read()
            source = f"resources/{SCENARIO_RESOURCE}"
        configs.read_string(text)
        logger.info(f"Loading scenario from {source}")
        return cls.from_parser(configs, source,
                               hashlib.sha256(text.encode()).hexdigest())

    @classmethod
    def from_parser(cls, configs: configparser.ConfigParser,
                    source: str = "<memory>", digest: str = ""
                    ) -> ScenarioFile:
        getint = cls._typed(configs.getint)
        getfloat = cls._typed(configs.getfloat)

        L = getint("NETWORK", "cells", cls._DEFAULT_CELLS)
        K = getint("NETWORK", "users_per_cell", cls._DEFAULT_USERS)
        N = getint("NETWORK", "arrays_per_cell", cls._DEFAULT_ARRAYS)
        M = getint("NETWORK", "antennas_per_array", cls._DEFAULT_ANTENNAS)
        scalars = SystemScalars(
            tau_c=getint("NETWORK", "coherence_samples", cls._DEFAULT_TAU_C),
            rho_tr=getfloat("NETWORK", "pilot_power",
                            cls._DEFAULT_PILOT_POWER),
            sigma2=getfloat("NETWORK", "noise_variance", cls._DEFAULT_NOISE))
        for name, value in (("cells", L), ("users_per_cell", K),
                            ("arrays_per_cell", N),
                            ("antennas_per_array", M)):
            if value < 1:
                raise ScenarioConfigError(name, "must be >= 1")
        if not scalars.tau_c > K:
            raise ScenarioConfigError(
                "coherence_samples", "must exceed users_per_cell")
        if not scalars.rho_tr > 0:
            raise ScenarioConfigError("pilot_power", "must be positive")
        if not scalars.sigma2 > 0:
            raise ScenarioConfigError("noise_variance", "must be positive")

        cell_radius = cls._optional_float(configs, "GEOMETRY", "cell_radius")
        geometry = GeometryParams(
            array_ring_radius=getfloat("GEOMETRY", "array_ring_radius",
                                       cls._DEFAULT_ARRAY_RING),
            user_ring_radius=getfloat("GEOMETRY", "user_ring_radius",
                                      cls._DEFAULT_USER_RING),
            cell_radius=cell_radius)
        geometry.validate()

        spread = getfloat("ONE_RING", "angular_spread_deg",
                          cls._DEFAULT_SPREAD_DEG)
        ref_db = cls._optional_float(configs, "ONE_RING", "pathloss_ref_db")
        one_ring_kwargs = dict(
            angular_spread=math.radians(spread),
            antenna_spacing=getfloat("ONE_RING", "antenna_spacing",
                                     cls._DEFAULT_SPACING),
            pathloss_exponent=getfloat("ONE_RING", "pathloss_exponent",
                                       cls._DEFAULT_EXPONENT))
        try:
            if ref_db is not None:
                one_ring = OneRingParams(pathloss_ref_db=ref_db,
                                         **one_ring_kwargs)
            else:
                one_ring = OneRingParams.calibrated(
                    edge_distance=geometry.user_ring_radius,
                    sigma2=scalars.sigma2,
                    edge_snr_db=getfloat("ONE_RING", "edge_snr_db",
                                         cls._DEFAULT_EDGE_SNR_DB),
                    **one_ring_kwargs)
            one_ring.validate()
        except ValueError as e:
            field_name = getattr(e, "field", "ONE_RING")
            raise ScenarioConfigError(field_name, str(e)) from e

        if configs.has_section("POSITIONS"):
            scenario = cls._custom(configs, geometry, L, K, N, M, scalars)
        else:
            scenario = build_ring_network(geometry, L, K, N, M, scalars)
        return ScenarioFile(scenario=scenario, geometry=geometry,
                            one_ring=one_ring, source=source, digest=digest)

    @staticmethod
    def _optional_float(configs, section, option):
        """A float option that may be absent or left empty."""
        value = configs.get(section, option, fallback=None)
        if not value:
            return None
        try:
            return float(value)
        except ValueError as e:
            raise ScenarioConfigError(
                option, f"expected a number, got {value!r}") from e

    @staticmethod
    def _typed(getter):
        def get(section, option, fallback):
            try:
                return getter(section, option, fallback=fallback)
            except ValueError as e:
                raise ScenarioConfigError(option, str(e)) from e
        return get

    @classmethod
    def _custom(cls, configs, geometry, L, K, N, M, scalars):
        arrays = np.full((L, N, 2), np.nan)
        users = np.full((L, K, 2), np.nan)
        targets: Dict[str, np.ndarray] = {"array": arrays, "user": users}
        for key, value in configs.items("POSITIONS"):
            match = cls._POSITION_KEY.match(key)
            if not match:
                raise ScenarioConfigError(key, "unknown position key")
            target = targets[match.group(1)]
            cell, index = int(match.group(2)), int(match.group(3))
            if cell >= target.shape[0] or index >= target.shape[1]:
                raise ScenarioConfigError(key, "index out of range")
            try:
                target[cell, index] = [float(v) for v in value.split(",")]
            except ValueError as e:
                raise ScenarioConfigError(key, "expected 'x, y'") from e
        for name, target in (("array_positions", arrays),
                             ("user_positions", users)):
            if np.isnan(target).any():
                raise ScenarioConfigError(name, "missing coordinates")
        radius = geometry.hexagon_radius
        return build_custom_network(hexagon_centers(L, radius), arrays,
                                    users, M, radius, scalars)
