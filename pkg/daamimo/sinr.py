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
"""Downlink SINR with conjugate beamforming on the channel estimates.

Array ``n`` of cell ``l`` transmits to its user ``i`` with beam
``nu[l, i, n] * hhat[l, i, n]``. The closed form below is the large-scale
SINR that a user can decode with; :func:`monte_carlo_sinr` estimates the
same quantity by simulation.
"""
from dataclasses import dataclass, field
from typing import Optional
import logging

import numpy as np
import pandas as pd

from daamimo.constants import columns, defaults
from daamimo.covariance import CovarianceSet
from daamimo.estimation import (ChannelSampler, EstimationSet, make_rng,
                                pilot_estimate)

logger = logging.getLogger(__name__)


class ImaginaryResidualError(ValueError):
    """A trace that must be real has a significant imaginary part."""

    def __init__(self, name: str, residual: float):
        super().__init__(
            f"{name} has relative imaginary residual {residual:.3e}")
        self.name = name
        self.residual = residual


def _real(name: str, values: np.ndarray,
          tol: float = defaults.TOL_IMAG) -> np.ndarray:
    scale = max(float(np.max(np.abs(values), initial=0.0)),
                np.finfo(float).tiny)
    residual = float(np.max(np.abs(values.imag), initial=0.0)) / scale
    if residual > tol:
        raise ImaginaryResidualError(name, residual)
    return np.ascontiguousarray(values.real)


@dataclass(frozen=True)
class SinrCoefficients:
    """Large-scale coefficients of the SINR.

    Attributes:
        chi (np.ndarray): ``chi[j, k, n] = tr(W_jk^jn R_jk^jn)``.
        zeta (np.ndarray): ``zeta[j, k, l, i, n] = tr(W Q W^H of (l, i) at
            array (l, n), times R_jk^ln)``.
        xi (np.ndarray): ``xi[j, k, l, n] = tr(W_lk^ln R_jk^ln)``, zero for
            ``l == j``.
        power_traces (np.ndarray): ``tr(W Q W^H)`` per ``[l, i, n]``.
    """
    chi: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    power_traces: np.ndarray

    @property
    def shape(self):
        """``(L, K, N)``."""
        return self.chi.shape


@dataclass(frozen=True)
class PowerAllocation:
    """Nonnegative power coefficients ``nu[l, i, n]``."""
    nu: np.ndarray

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float)
        if nu.ndim != 3:
            raise ValueError("nu must have shape (L, K, N)")
        if np.any(nu < 0) or not np.all(np.isfinite(nu)):
            raise ValueError("nu must be finite and nonnegative")
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)

    def cell_powers(self, power_traces: np.ndarray) -> np.ndarray:
        """``sum_{i, n} nu^2 tr(W Q W^H)`` per cell."""
        return np.einsum("lin,lin->l", self.nu ** 2, power_traces)


@dataclass(frozen=True)
class SinrReport:
    """Per-user SINR and spectral efficiency.

    The Monte Carlo standard errors are ``None`` for closed-form reports.
    """
    gamma: np.ndarray
    se: np.ndarray
    gamma_stderr: Optional[np.ndarray] = None
    numerator_stderr: Optional[np.ndarray] = None
    denominator_stderr: Optional[np.ndarray] = None
    draws: Optional[int] = field(default=None)

    @property
    def sum_se(self) -> float:
        return float(self.se.sum())

    @property
    def min_se(self) -> float:
        return float(self.se.min())

    @property
    def cell_se(self) -> np.ndarray:
        return self.se.sum(axis=1)

    def to_frame(self) -> pd.DataFrame:
        L, K = self.gamma.shape
        cell, user = np.meshgrid(np.arange(L), np.arange(K), indexing="ij")
        data = {"cell": cell.ravel(), "user": user.ravel(),
                "gamma": self.gamma.ravel(), "se": self.se.ravel()}
        if self.gamma_stderr is None:
            return pd.DataFrame(data, columns=columns.REPORT)
        data.update(gamma_stderr=self.gamma_stderr.ravel(),
                    numerator_stderr=self.numerator_stderr.ravel(),
                    denominator_stderr=self.denominator_stderr.ravel())
        return pd.DataFrame(data, columns=columns.REPORT_MC)

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, float_format="%.12g")


def compute_coefficients(covariance_set: CovarianceSet,
                         estimation_set: EstimationSet,
                         tol: float = defaults.TOL_IMAG
                         ) -> SinrCoefficients:
    """Compute chi, zeta and xi from the covariances and estimators.

    Raises:
        ImaginaryResidualError: If a trace is not real to within ``tol``
            relative to the largest magnitude of its kind.
    """
    R = covariance_set.matrices
    W = estimation_set.W
    P = estimation_set.estimate_covariance
    L = R.shape[0]
    cells = np.arange(L)
    own = R[cells, :, cells]  # own[j, k, n] = R[j, k, j, n]

    # tr(AB) = sum_ab A_ab B_ba
    chi = np.einsum("jknab,jknba->jkn", W, own)
    zeta = np.einsum("linab,jklnba->jklin", P, R)
    xi = np.einsum("lknab,jklnba->jkln", W, R)
    xi[cells, :, cells] = 0.0

    coefficients = SinrCoefficients(
        chi=_real("chi", chi, tol), zeta=_real("zeta", zeta, tol),
        xi=_real("xi", xi, tol), power_traces=estimation_set.power_traces)
    logger.debug(f"Coefficients: chi in [{coefficients.chi.min():.4g}, "
                 f"{coefficients.chi.max():.4g}]")
    return coefficients


def spectral_efficiency(gamma, K: int, tau_c: int):
    """``(1 - K / tau_c) log2(1 + gamma)``.

    Raises:
        ValueError: If ``tau_c <= K``.
    """
    if not tau_c > K:
        raise ValueError(f"tau_c ({tau_c}) must exceed K ({K})")
    return (1 - K / tau_c) * np.log2(1 + np.asarray(gamma, dtype=float))


def sinr_terms(coefficients: SinrCoefficients, nu: np.ndarray):
    """Desired signal power and interference of every user.

    Returns:
        tuple: ``(signal, interference)`` of shape ``(L, K)``. The
        interference excludes the noise.
    """
    L, K, N = coefficients.shape
    signal = np.einsum("jkn,jkn->jk", nu, coefficients.chi) ** 2
    spread = np.einsum("lin,jklin->jk", nu ** 2, coefficients.zeta)
    # coherent pilot-contamination term of the other cells' beams
    coherent = np.einsum("lkn,jkln->jkl", nu, coefficients.xi) ** 2
    return signal, spread + coherent.sum(axis=-1)


def closed_form_sinr(coefficients: SinrCoefficients,
                     allocation: PowerAllocation, sigma2: float,
                     tau_c: int = 200) -> SinrReport:
    """Large-scale SINR of every user for a power allocation.

    Args:
        coefficients (SinrCoefficients): chi, zeta and xi.
        allocation (PowerAllocation): The coefficients ``nu``.
        sigma2 (float): Noise variance, ``> 0``.
        tau_c (int): Coherence interval for the spectral efficiency.

    Returns:
        SinrReport: gamma and SE per user.
    """
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    if allocation.nu.shape != coefficients.shape:
        raise ValueError(f"allocation shape {allocation.nu.shape} does not "
                         f"match coefficients {coefficients.shape}")
    signal, interference = sinr_terms(coefficients, allocation.nu)
    gamma = signal / (interference + sigma2)
    K = coefficients.shape[1]
    return SinrReport(gamma=gamma, se=spectral_efficiency(gamma, K, tau_c))


def _draws_per_batch(sampler: ChannelSampler, batch_size: int) -> int:
    # bound the complex elements of one batch of channels
    per_draw = int(np.prod(sampler.shape)) * sampler.factors.shape[-1]
    return int(max(1, min(batch_size, 4_000_000 // max(per_draw, 1))))


def monte_carlo_sinr(covariance_set: CovarianceSet,
                     estimation_set: EstimationSet,
                     allocation: PowerAllocation, sigma2: float, draws: int,
                     seed: int, tau_c: int = 200,
                     batch_size: int = defaults.MC_BATCH_SIZE) -> SinrReport:
    """Estimate the SINR by simulating channels, pilots and beams.

    With ``g[j, k, l, i] = sum_n nu[l, i, n] h_jk^{ln H} hhat_li^{ln}`` the
    estimate is ``|E g_jk|^2 / (sum_li E|g_li|^2 - |E g_jk|^2 + sigma2)``,
    with sample means over ``draws`` draws. Standard errors come from the
    delta method. Batch ``b`` draws from the sub-stream ``(seed, b)``, so
    the result depends only on ``seed`` and ``batch_size``.

    Args:
        covariance_set (CovarianceSet): Channel covariances.
        estimation_set (EstimationSet): Estimators and pilot power.
        allocation (PowerAllocation): The coefficients ``nu``.
        sigma2 (float): Noise variance.
        draws (int): Number of channel draws. At least
            ``defaults.MC_MIN_DRAWS`` for a meaningful cross-check; fewer,
            down to two, run with a warning.
        seed (int): Master seed.
        tau_c (int): Coherence interval for the spectral efficiency.
        batch_size (int): Upper bound on draws per batch.

    Returns:
        SinrReport: Estimated gamma, SE and their standard errors.

    Raises:
        ValueError: On fewer than two draws or nonpositive ``sigma2``.
    """
    if draws < 2:
        raise ValueError("at least two draws are needed")
    if draws < defaults.MC_MIN_DRAWS:
        logger.warning(f"Monte Carlo SINR with {draws} draws, fewer than "
                       f"{defaults.MC_MIN_DRAWS}; standard errors are "
                       f"unreliable")
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    sampler = ChannelSampler(covariance_set)
    L, K, N, M = covariance_set.shape
    nu = allocation.nu
    per_batch = _draws_per_batch(sampler, batch_size)
    users = np.arange(L * K)

    # first and second moments of x = (Re g_jk, Im g_jk, sum_li |g_li|^2)
    first = np.zeros((L * K, 3))
    second = np.zeros((L * K, 3, 3))
    done, batch = 0, 0
    while done < draws:
        size = min(per_batch, draws - done)
        rng = make_rng(seed, batch)
        h = sampler.draw(rng, size)
        hhat = pilot_estimate(h, estimation_set, rng)
        g = np.einsum("bjklnm,blinm,lin->bjkli", h.conj(), hhat, nu,
                      optimize=True)
        g = g.reshape(size, L * K, L * K)
        desired = g[:, users, users]
        x = np.stack([desired.real, desired.imag,
                      (np.abs(g) ** 2).sum(axis=-1)], axis=-1)
        first += x.sum(axis=0)
        second += np.einsum("bua,buc->uac", x, x)
        done += size
        batch += 1
    mean = first / draws
    cov = (second - draws * np.einsum("ua,uc->uac", mean, mean)) / (
        draws - 1)

    a_re, a_im, b = mean[:, 0], mean[:, 1], mean[:, 2]
    numerator = a_re ** 2 + a_im ** 2
    denominator = b - numerator + sigma2
    gamma = numerator / denominator
    zeros = np.zeros_like(numerator)
    grad_numerator = np.stack([2 * a_re, 2 * a_im, zeros], axis=-1)
    grad_denominator = np.stack([-2 * a_re, -2 * a_im, zeros + 1], axis=-1)
    grad_gamma = (grad_numerator * denominator[:, None]
                  - grad_denominator * numerator[:, None]) / (
                      denominator[:, None] ** 2)

    def stderr(grad):
        variance = np.einsum("ua,uac,uc->u", grad, cov, grad) / draws
        return np.sqrt(np.clip(variance, 0.0, None)).reshape(L, K)

    gamma = gamma.reshape(L, K)
    logger.info(f"Monte Carlo SINR over {draws} draws "
                f"({batch} batches, seed {seed})")
    return SinrReport(gamma=gamma, se=spectral_efficiency(gamma, K, tau_c),
                      gamma_stderr=stderr(grad_gamma),
                      numerator_stderr=stderr(grad_numerator),
                      denominator_stderr=stderr(grad_denominator),
                      draws=draws)
