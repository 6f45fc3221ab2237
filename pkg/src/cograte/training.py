"""LMMSE channel-training statistics and strongest-beam selection.

Given a sensed-idle outcome the estimated gain of beam m under hypothesis
H_l is exponential with mean ``alpha_hat_l[m]``; the selected gain is the
maximum over beams. Closed forms enumerate all nonempty beam subsets
(inclusion-exclusion), evaluated with exact (``math.fsum``) summation.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .antenna import AntennaConfig, pattern_gain
from .sensing import SensingStats

__all__ = ["TrainingConfig", "EstimatorStats", "SelectionStats",
           "default_alpha", "estimator_variances", "selection_statistics",
           "tail_prob_nu_star", "MAX_SUBSET_BEAMS"]

MAX_SUBSET_BEAMS = 20


@dataclass(frozen=True)
class TrainingConfig:
    N_tr: float
    P_tr: float
    alpha: tuple
    sigma_q2: float = 0.5
    sigma_p2: float = 0.25

    def __post_init__(self):
        if min(self.N_tr, self.P_tr, self.sigma_q2) <= 0 or self.sigma_p2 < 0:
            raise ValueError("training parameters must be positive")
        if any(a <= 0 for a in self.alpha):
            raise ValueError("alpha must be positive per beam")


def default_alpha(antenna: AntennaConfig, gamma_ss: float, phi_sr: float
                  ) -> tuple:
    """Mean per-beam gains ``gamma_ss * p_m(phi_sr)``."""
    return tuple(float(gamma_ss * pattern_gain(phi_sr, m, antenna))
                 for m in range(antenna.M))


@dataclass(frozen=True)
class EstimatorStats:
    alpha: np.ndarray
    alpha_hat0: np.ndarray
    alpha_hat1: np.ndarray
    alpha_tilde0: np.ndarray
    alpha_tilde1: np.ndarray
    omega0: float
    omega1: float
    sigma_q2: float = 0.5
    sigma_p2: float = 0.25

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.omega0 * self.alpha_hat0 + self.omega1 * self.alpha_hat1

    @property
    def alpha_tilde(self) -> np.ndarray:
        return self.omega0 * self.alpha_tilde0 + self.omega1 * self.alpha_tilde1

    def hat(self, ell):
        return self.alpha_hat1 if ell else self.alpha_hat0

    def tilde(self, ell):
        return self.alpha_tilde1 if ell else self.alpha_tilde0

    def noise_floor(self, ell) -> float:
        """Receiver noise plus PU interference under hypothesis ``ell``."""
        return self.sigma_q2 + ell * self.sigma_p2


def lmmse_coefficient(tcfg: TrainingConfig, omega1: float) -> np.ndarray:
    """Per-beam weight applied to the sum of received training samples."""
    a = np.asarray(tcfg.alpha, dtype=float)
    return a * np.sqrt(tcfg.P_tr) / (a * tcfg.P_tr * tcfg.N_tr + tcfg.sigma_q2
                                     + omega1 * tcfg.sigma_p2)


def estimator_variances(tcfg: TrainingConfig, sstats: SensingStats
                        ) -> EstimatorStats:
    a = np.asarray(tcfg.alpha, dtype=float)
    snr = a * tcfg.P_tr * tcfg.N_tr
    denom = (snr + tcfg.sigma_q2 + sstats.omega1 * tcfg.sigma_p2) ** 2
    hat0 = a * snr * (snr + tcfg.sigma_q2) / denom
    hat1 = a * snr * (snr + tcfg.sigma_q2 + tcfg.sigma_p2) / denom
    return EstimatorStats(alpha=a, alpha_hat0=hat0, alpha_hat1=hat1,
                          alpha_tilde0=a - hat0, alpha_tilde1=a - hat1,
                          omega0=sstats.omega0, omega1=sstats.omega1,
                          sigma_q2=tcfg.sigma_q2, sigma_p2=tcfg.sigma_p2)


def _subset_bits(M):
    if M > MAX_SUBSET_BEAMS:
        raise NotImplementedError(
            f"subset enumeration limited to M <= {MAX_SUBSET_BEAMS}")
    masks = np.arange(1, 2 ** M)
    bits = ((masks[:, None] >> np.arange(M)) & 1).astype(bool)
    sizes = bits.sum(axis=1)
    return bits, sizes


@dataclass(frozen=True)
class SelectionStats:
    """Selection probabilities and max-gain distribution per hypothesis.

    ``signs[l][k] * exp(-y * rates[l][k])`` are the inclusion-exclusion terms
    of ``F^l(y) - 1`` over nonempty beam subsets k.
    """

    alpha_hat: tuple          # (alpha_hat0, alpha_hat1)
    omega: tuple              # (omega0, omega1)
    Psi0: np.ndarray
    Psi1: np.ndarray
    signs: tuple
    rates: tuple
    subset_bits: np.ndarray = field(repr=False)
    mean_l: tuple = (0.0, 0.0)

    @property
    def M(self) -> int:
        return len(self.Psi0)

    @property
    def mean_nu_star(self) -> float:
        return self.omega[0] * self.mean_l[0] + self.omega[1] * self.mean_l[1]

    def Psi(self, ell):
        return self.Psi1 if ell else self.Psi0

    # product-form evaluation (stable for all y >= 0)
    def _logF(self, y, ell):
        y = np.asarray(y, dtype=float)
        a = self.alpha_hat[ell]
        with np.errstate(divide="ignore"):
            return np.log1p(-np.exp(-y[..., None] / a))

    def cdf(self, y, ell):
        return np.exp(self._logF(y, ell).sum(-1))

    def sf(self, y, ell):
        return -np.expm1(self._logF(y, ell).sum(-1))

    def beam_weights(self, y, ell):
        """``f_j(y) prod_{m != j} F_m(y)``; last axis indexes beam j."""
        return np.exp(self.log_beam_weights(y, ell))

    def log_beam_weights(self, y, ell):
        y = np.asarray(y, dtype=float)
        a = self.alpha_hat[ell]
        logF = self._logF(y, ell)
        M = self.M
        if M == 1:
            others = np.zeros_like(logF)
        else:
            others = np.stack([np.delete(logF, j, axis=-1).sum(-1)
                               for j in range(M)], axis=-1)
        return -y[..., None] / a + others - np.log(a)

    def pdf(self, y, ell):
        return self.beam_weights(y, ell).sum(-1)

    def mixture_cdf(self, y):
        return self.omega[0] * self.cdf(y, 0) + self.omega[1] * self.cdf(y, 1)

    # inclusion-exclusion forms
    def cdf_coeff(self, y, ell):
        y = np.asarray(y, dtype=float)
        return 1.0 + np.exp(-y[..., None] * self.rates[ell]) @ self.signs[ell]

    def pdf_coeff(self, y, ell):
        y = np.asarray(y, dtype=float)
        r = self.rates[ell]
        return np.exp(-y[..., None] * r) @ (-self.signs[ell] * r)


def _psi_closed_form(a_hat, bits, sizes):
    # Psi_i = sum over subsets T containing i of (-1)^{|T|+1} (1/a_i) / A_T
    inv = 1.0 / a_hat
    A = bits.astype(float) @ inv
    out = np.empty(len(a_hat))
    for i in range(len(a_hat)):
        sel = bits[:, i]
        terms = np.where(sizes[sel] % 2 == 1, 1.0, -1.0) * inv[i] / A[sel]
        out[i] = math.fsum(terms)
    return out


def selection_statistics(estats: EstimatorStats, sstats: SensingStats = None
                         ) -> SelectionStats:
    M = len(estats.alpha)
    bits, sizes = _subset_bits(M)
    signs = np.where(sizes % 2 == 1, -1.0, 1.0)
    psis, rates, means = [], [], []
    for ell in (0, 1):
        a_hat = estats.hat(ell)
        A = bits.astype(float) @ (1.0 / a_hat)
        rates.append(A)
        psis.append(_psi_closed_form(a_hat, bits, sizes))
        means.append(math.fsum(-signs / A))
    omega = (estats.omega0, estats.omega1) if sstats is None else \
        (sstats.omega0, sstats.omega1)
    return SelectionStats(
        alpha_hat=(estats.alpha_hat0, estats.alpha_hat1), omega=omega,
        Psi0=psis[0], Psi1=psis[1], signs=(signs, signs),
        rates=tuple(rates), subset_bits=bits, mean_l=tuple(means))


def tail_prob_nu_star(c, stats: SelectionStats, mean: float = None
                      ) -> float:
    """``Pr(nu* >= c * mean)`` under the sensed-idle mixture.

    ``mean`` defaults to the model's own mean selected gain; pass a fixed
    value to evaluate the tail at externally given abscissae.
    """
    if np.any(np.asarray(c) <= 0):
        raise ValueError("c must be positive")
    if mean is None:
        mean = stats.mean_nu_star
    y = np.asarray(c, dtype=float) * mean
    out = stats.omega[0] * stats.sf(y, 0) + stats.omega[1] * stats.sf(y, 1)
    return out if np.ndim(out) else float(out)
