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
"""MMSE channel estimation from uplink pilots, and channel sampling.

Users with the same index in different cells share a pilot, so the
estimate of ``h_{lk}^{ln}`` is contaminated by every ``h_{l'k}^{ln}``.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Union
import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from daamimo.constants import defaults
from daamimo.covariance import CovarianceSet

logger = logging.getLogger(__name__)


class IllConditionedError(LinAlgError):
    """Q could not be factored.

    Attributes:
        condition (float): Estimated condition number of Q.
    """

    def __init__(self, condition: float):
        super().__init__(f"Q is ill-conditioned (cond ~ {condition:.3e})")
        self.condition = condition


def make_rng(seed: Optional[int], *spawn_key: int) -> np.random.Generator:
    """Counter-based generator for ``seed`` and a sub-stream key.

    Equal ``(seed, spawn_key)`` always give the same stream, independent
    of batch sizes or worker counts.
    """
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.Philox(sequence))


def compute_Q(covariances: Union[Sequence[np.ndarray], np.ndarray],
              rho_tr: float) -> np.ndarray:
    """Covariance of the received pilot: ``sum_l' R_l' + I / rho_tr``.

    Args:
        covariances: The ``M x M`` covariances of all users sharing the
            pilot at this array. A stacked array sums its first axis.
        rho_tr (float): Total pilot power.

    Raises:
        ValueError: If ``rho_tr`` is not positive.
    """
    if not rho_tr > 0:
        raise ValueError(f"rho_tr must be positive, got {rho_tr}")
    total = np.sum(np.asarray(covariances, dtype=complex), axis=0)
    return total + np.eye(total.shape[-1]) / rho_tr


def compute_W(R_desired: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """MMSE estimation matrix ``W = R Q^-1`` by Cholesky, without
    forming the inverse.

    Raises:
        IllConditionedError: If Q is not numerically positive definite.
    """
    try:
        factor = cho_factor(Q, lower=True, check_finite=True)
    except (LinAlgError, ValueError):
        raise IllConditionedError(np.linalg.cond(Q)) from None
    # Q and R are Hermitian, so W^H = Q^-1 R
    return cho_solve(factor, R_desired).conj().T


@dataclass(frozen=True)
class EstimationSet:
    """Per (cell, user, array) pilot statistics.

    ``Q[l, i, n]`` and ``W[l, i, n]`` belong to the estimate of the
    channel from array ``n`` of cell ``l`` to its own user ``i``.
    """
    Q: np.ndarray
    W: np.ndarray
    rho_tr: float

    @property
    def shape(self):
        L, K, N, M, _ = self.W.shape
        return L, K, N, M

    @cached_property
    def estimate_covariance(self) -> np.ndarray:
        """``W Q W^H``, the covariance of every channel estimate."""
        WQ = self.W @ self.Q
        return WQ @ np.swapaxes(self.W, -1, -2).conj()

    @cached_property
    def power_traces(self) -> np.ndarray:
        """``tr(W Q W^H)``, real, shape ``(L, K, N)``."""
        return np.real(np.trace(self.estimate_covariance, axis1=-2,
                                axis2=-1))


def build_estimation_set(covariance_set: CovarianceSet,
                         rho_tr: float) -> EstimationSet:
    """Q and W for every array and each of its own cell's users."""
    L, K, N, M = covariance_set.shape
    R = covariance_set.matrices
    Q = np.empty((L, K, N, M, M), dtype=complex)
    W = np.empty_like(Q)
    for l, i, n in np.ndindex(L, K, N):
        Q[l, i, n] = compute_Q(R[:, i, l, n], rho_tr)
        try:
            W[l, i, n] = compute_W(R[l, i, l, n], Q[l, i, n])
        except IllConditionedError as e:
            logger.error(f"Q of user {(l, i)} at array {(l, n)}: {e}")
            raise
    logger.info(f"Built estimation set for {L * K * N} array/user pairs")
    return EstimationSet(Q=Q, W=W, rho_tr=float(rho_tr))


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of every channel, ``h[l, i, j, n]`` of length M.

    With ``draws`` set the array has a leading draw axis.
    """
    h: np.ndarray
    seed: Optional[int]


class ChannelSampler:
    """Draws ``h = F z`` with ``F F^H = R`` and ``z ~ CN(0, I)``."""

    def __init__(self, covariance_set: CovarianceSet,
                 tol: float = defaults.TOL_PSD):
        R = covariance_set.matrices
        eigenvalues, vectors = np.linalg.eigh(R)
        trace = np.real(np.trace(R, axis1=-2, axis2=-1))
        if np.any(eigenvalues.min(-1) < -tol * trace):
            raise ValueError("covariance matrix is not positive semidefinite")
        eigenvalues = np.clip(eigenvalues, 0.0, None)
        self.factors = vectors * np.sqrt(eigenvalues)[..., None, :]
        self.shape = R.shape[:-1]

    def draw(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """``size`` channel draws of shape ``(size, L, K, L, N, M)``."""
        z = standard_complex_normal(rng, (size,) + self.shape)
        return np.einsum("...ab,...b->...a", self.factors, z)


def standard_complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape)
            + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_channels(covariance_set: CovarianceSet, seed: Optional[int],
                    draws: Optional[int] = None) -> ChannelRealization:
    """Draw every channel from its covariance.

    Args:
        covariance_set (CovarianceSet): Channel covariances.
        seed (int): Seed; equal seeds give identical draws.
        draws (int, optional): Number of independent draws. Without it a
            single realization is returned with no draw axis.

    Returns:
        ChannelRealization: The draw(s).
    """
    sampler = ChannelSampler(covariance_set)
    h = sampler.draw(make_rng(seed), draws or 1)
    return ChannelRealization(h=h if draws else h[0], seed=seed)


def pilot_estimate(h: np.ndarray, estimation_set: EstimationSet,
                   rng: Optional[np.random.Generator],
                   rho_tr: Optional[float] = None) -> np.ndarray:
    """MMSE estimates from channels ``h[..., l, i, j, n, :]``.

    Array ``n`` of cell ``l`` receives ``y = sum_l' h_{l'k}^{ln} +
    noise / sqrt(rho_tr)`` on pilot ``k`` and estimates ``W y``.

    Returns:
        np.ndarray: ``hhat[..., l, k, n, :]``.
    """
    rho_tr = estimation_set.rho_tr if rho_tr is None else rho_tr
    # sum over the transmitting cell l' and keep the receiving (l, n)
    y = np.swapaxes(h.sum(axis=-5), -3, -4)
    if rng is not None:
        y = y + standard_complex_normal(rng, y.shape) / np.sqrt(rho_tr)
    return np.einsum("lknab,...lknb->...lkna", estimation_set.W, y)


def simulate_pilot_and_estimate(realization: ChannelRealization,
                                estimation_set: EstimationSet,
                                rho_tr: Optional[float] = None,
                                noise_seed: Optional[int] = None
                                ) -> np.ndarray:
    """Channel estimates for one realization.

    Args:
        realization (ChannelRealization): True channels.
        estimation_set (EstimationSet): W matrices.
        rho_tr (float, optional): Pilot power, defaults to the one the
            estimation set was built with.
        noise_seed (int, optional): Seed of the pilot noise. ``None``
            gives a noiseless pilot.

    Returns:
        np.ndarray: ``hhat[l, k, n]`` of length M.
    """
    rng = None if noise_seed is None else make_rng(noise_seed)
    return pilot_estimate(realization.h, estimation_set, rng, rho_tr)
