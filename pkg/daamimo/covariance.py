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
"""Spatial channel covariance under the one-ring scattering model."""
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple
import logging
import math

import numpy as np
from scipy import integrate
from scipy.linalg import toeplitz

from daamimo.constants import defaults

if TYPE_CHECKING:  # pragma: no cover
    from daamimo.scenario import NetworkScenario

logger = logging.getLogger(__name__)


class QuadratureError(RuntimeError):
    """The covariance integral did not converge.

    Attributes:
        error_estimate (float): Achieved absolute error estimate.
    """

    def __init__(self, message: str, error_estimate: float):
        super().__init__(f"{message} (error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


class OneRingParamError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class OneRingParams:
    """Parameters of the one-ring model and the path loss.

    Attributes:
        angular_spread (float): Half-width of the angle of arrival
            interval, in radians.
        antenna_spacing (float): Element spacing in wavelengths.
        pathloss_exponent (float): Distance exponent of the path loss.
        pathloss_ref_db (float): Path loss in dB at 1 m, relative to the
            noise floor.
    """
    angular_spread: float = math.radians(10.0)
    antenna_spacing: float = 0.5
    pathloss_exponent: float = 3.76
    pathloss_ref_db: float = 0.0

    def validate(self):
        if not self.angular_spread > 0:
            raise OneRingParamError("angular_spread_deg", "must be positive")
        if not self.antenna_spacing > 0:
            raise OneRingParamError("antenna_spacing", "must be positive")
        if not self.pathloss_exponent > 0:
            raise OneRingParamError("pathloss_exponent", "must be positive")

    @classmethod
    def calibrated(cls, edge_distance: float, sigma2: float,
                   edge_snr_db: float = 0.0, **kwargs) -> "OneRingParams":
        """Parameters whose path loss gives ``edge_snr_db`` at
        ``edge_distance`` for noise variance ``sigma2``.
        """
        exponent = kwargs.get("pathloss_exponent", cls.pathloss_exponent)
        ref_db = (edge_snr_db + 10 * math.log10(sigma2)
                  + 10 * exponent * math.log10(edge_distance))
        return cls(pathloss_ref_db=ref_db, **kwargs)


def path_loss(distance, params: OneRingParams):
    """Large-scale fading ``beta = 10^(ref/10) * d^-exponent``.

    Raises:
        ValueError: If any distance is not positive.
    """
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise ValueError("path loss needs a positive distance")
    beta = 10 ** (params.pathloss_ref_db / 10) * distance ** (
        -params.pathloss_exponent)
    return float(beta) if beta.ndim == 0 else beta


@dataclass(frozen=True)
class CovarianceMatrix:
    """Covariance of the channel between one array and one user."""
    entries: np.ndarray
    beta: float
    array_id: Optional[Tuple[int, int]] = None
    user_id: Optional[Tuple[int, int]] = None

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    def is_hermitian(self, tol: float = defaults.TOL_PSD) -> bool:
        scale = max(abs(self.beta), np.finfo(float).tiny)
        return np.max(np.abs(self.entries - self.entries.conj().T)) <= (
            tol * scale)

    def is_psd(self, tol: float = defaults.TOL_PSD) -> bool:
        trace = np.real(np.trace(self.entries))
        eigenvalues = np.linalg.eigvalsh(self.entries)
        return eigenvalues.min() >= -tol * max(trace, 0.0)


def _lag_integrals(azimuth: float, params: OneRingParams, M: int,
                   tol: float) -> np.ndarray:
    """Average of ``exp(-i 2 pi D d sin(alpha))`` over the spread, for
    lags ``d = 1 .. M-1``."""
    lags = np.arange(1, M)
    spread = params.angular_spread
    phase = 2 * np.pi * params.antenna_spacing * lags

    def integrand(alpha):
        arg = phase * np.sin(alpha)
        return np.concatenate([np.cos(arg), -np.sin(arg)])

    lower, upper = azimuth - spread, azimuth + spread
    result, error, info = integrate.quad_vec(
        integrand, lower, upper, epsabs=tol * 2 * spread, epsrel=0,
        norm="max", full_output=True)
    if not info.success:
        logger.warning(f"Adaptive quadrature stalled at azimuth {azimuth:.4f}"
                       f" (error {error:.3e}); using fixed panels")
        result, error = _panel_integral(integrand, lower, upper)
        if error > tol * 2 * spread:
            raise QuadratureError(
                f"one-ring integral at azimuth {azimuth:.4f} failed", error)
    values = result / (2 * spread)
    return values[:M - 1] + 1j * values[M - 1:]


def _panel_integral(integrand, lower, upper,
                    panels=defaults.QUAD_FALLBACK_PANELS):
    fine = np.linspace(lower, upper, panels + 1)
    samples = np.stack([integrand(a) for a in fine], axis=-1)
    result = integrate.simpson(samples, x=fine, axis=-1)
    coarse = integrate.simpson(samples[:, ::2], x=fine[::2], axis=-1)
    return result, float(np.max(np.abs(result - coarse)))


def one_ring_covariance(azimuth: float, beta: float, params: OneRingParams,
                        M: int, array_id=None, user_id=None,
                        tol: float = defaults.QUAD_EPSABS
                        ) -> CovarianceMatrix:
    """Covariance of a uniform linear array seen from one user.

    Entry ``(m, p)`` is ``beta`` times the average, over angles uniform on
    ``[azimuth - spread, azimuth + spread]``, of
    ``exp(-i 2 pi D (m - p) sin(alpha))``. The matrix is Toeplitz and
    Hermitian with diagonal exactly ``beta``.

    Args:
        azimuth (float): Angle of the user from broadside, radians.
        beta (float): Large-scale fading coefficient, ``> 0``.
        params (OneRingParams): Spread and element spacing.
        M (int): Number of antennas.
        array_id (tuple, optional): ``(j, n)`` label.
        user_id (tuple, optional): ``(l, i)`` label.
        tol (float): Absolute tolerance on each normalized entry.

    Returns:
        CovarianceMatrix: The ``M x M`` covariance.

    Raises:
        ValueError: On nonpositive ``beta``, spread or ``M``.
        QuadratureError: If the integral does not converge.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if int(M) != M or M < 1:
        raise ValueError(f"M must be an integer >= 1, got {M}")
    params.validate()
    lags = np.empty(M, dtype=complex)
    lags[0] = 1.0
    if M > 1:
        lags[1:] = _lag_integrals(azimuth, params, M, tol)
    entries = beta * toeplitz(lags)
    np.fill_diagonal(entries, beta)
    return CovarianceMatrix(entries=entries, beta=float(beta),
                            array_id=array_id, user_id=user_id)


class CovarianceSet:
    """Covariance matrices of every (user, array) pair.

    ``matrices[l, i, j, n]`` is the covariance of the channel from array
    ``n`` of cell ``j`` to user ``i`` of cell ``l``.
    """

    def __init__(self, matrices: np.ndarray, betas: np.ndarray):
        matrices = np.asarray(matrices, dtype=complex)
        betas = np.asarray(betas, dtype=float)
        if matrices.ndim != 6 or matrices.shape[-1] != matrices.shape[-2]:
            raise ValueError("expected matrices of shape (L, K, L, N, M, M)")
        L, K, L2, N = matrices.shape[:4]
        if L != L2 or betas.shape != (L, K, L, N):
            raise ValueError("betas must have shape (L, K, L, N)")
        matrices.setflags(write=False)
        betas.setflags(write=False)
        self.matrices = matrices
        self.betas = betas

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        """``(L, K, N, M)``."""
        L, K, _, N, M, _ = self.matrices.shape
        return L, K, N, M

    def __len__(self) -> int:
        L, K, N, _ = self.shape
        return L * K * L * N

    def __getitem__(self, key) -> CovarianceMatrix:
        l, i, j, n = key
        return CovarianceMatrix(entries=self.matrices[l, i, j, n],
                                beta=float(self.betas[l, i, j, n]),
                                array_id=(j, n), user_id=(l, i))

    def check(self, tol: float = defaults.TOL_PSD):
        """Raise ``ValueError`` unless every matrix is Hermitian PSD."""
        hermitian = np.swapaxes(self.matrices, -1, -2).conj()
        scale = np.maximum(self.betas, np.finfo(float).tiny)
        asym = np.max(np.abs(self.matrices - hermitian), axis=(-1, -2))
        if np.any(asym > tol * scale):
            raise ValueError("covariance matrix is not Hermitian")
        eigenvalues = np.linalg.eigvalsh(self.matrices)
        trace = np.real(np.trace(self.matrices, axis1=-2, axis2=-1))
        if np.any(eigenvalues.min(-1) < -tol * trace):
            raise ValueError("covariance matrix is not positive semidefinite")

    def save(self, path: str):
        """Write the set to a ``.npz`` container.

        The container holds ``shape = [L, K, N, M]``, ``betas`` and
        ``entries``: the matrices in row-major order with every complex
        value stored as a (real, imaginary) float64 pair.
        """
        np.savez(path, shape=np.array(self.shape, dtype=np.int64),
                 betas=self.betas,
                 entries=np.ascontiguousarray(self.matrices).view(np.float64))
        logger.info(f"Saved {len(self)} covariance matrices to {path}")

    @classmethod
    def load(cls, path: str) -> "CovarianceSet":
        with np.load(path) as data:
            L, K, N, M = (int(v) for v in data["shape"])
            matrices = data["entries"].view(np.complex128).reshape(
                L, K, L, N, M, M)
            return cls(matrices.copy(), data["betas"].copy())


def build_covariance_set(scenario: "NetworkScenario", params: OneRingParams,
                         tol: float = defaults.QUAD_EPSABS) -> CovarianceSet:
    """Covariance for every (user, array) pair of the network.

    Args:
        scenario (NetworkScenario): The network.
        params (OneRingParams): One-ring and path loss parameters.
        tol (float): Quadrature tolerance per normalized entry.

    Returns:
        CovarianceSet: ``L*K * L*N`` matrices of size ``M x M``.
    """
    distances, azimuths = scenario.pair_geometry()
    betas = path_loss(distances, params)
    L, K, N, M = scenario.L, scenario.K, scenario.N, scenario.M
    matrices = np.empty((L, K, L, N, M, M), dtype=complex)
    for index in np.ndindex(L, K, L, N):
        l, i, j, n = index
        matrices[index] = one_ring_covariance(
            azimuths[index], betas[index], params, M,
            array_id=(j, n), user_id=(l, i), tol=tol).entries
    logger.info(f"Built {matrices[..., 0, 0].size} covariance matrices "
                f"(L={L}, K={K}, N={N}, M={M})")
    return CovarianceSet(matrices, betas)
