"""Largest-eigenvalue (GLRT) spectrum sensing: threshold calibration and the
sensing-outcome probabilities used by every later phase."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .antenna import AntennaConfig
from .specfun import q_function, tw2_cdf

__all__ = ["SensingConfig", "SensingStats", "CalibrationError",
           "centering_scaling", "false_alarm_prob", "detectability_threshold",
           "detection_prob_given_psi", "average_detection_prob",
           "calibrate_threshold", "sensing_stats_from_eta"]

_PHI_NODES = 64
_G_NODES = 64
PD_MODELS = ("verbatim", "gated")


class CalibrationError(ValueError):
    """The requested average detection probability cannot be met."""


@dataclass(frozen=True)
class SensingConfig:
    N_se: float
    P_p: float = 0.5
    sigma_w2: float = 0.5
    gamma: float = 0.5
    pi1: float = 0.7
    target_Pd_bar: float = 0.85
    pd_model: str = "verbatim"

    def __post_init__(self):
        if self.pd_model not in PD_MODELS:
            raise ValueError(f"pd_model must be one of {PD_MODELS}")
        if min(self.N_se, self.P_p, self.sigma_w2, self.gamma) <= 0:
            raise ValueError("N_se, P_p, sigma_w2, gamma must be positive")
        if not 0 <= self.pi1 < 1:
            raise ValueError("pi1 must lie in [0, 1)")
        if not 0 < self.target_Pd_bar < 1:
            raise ValueError("target_Pd_bar must lie in (0, 1)")

    @property
    def pi0(self) -> float:
        return 1.0 - self.pi1

    @property
    def snr_scale(self) -> float:
        return self.P_p / self.sigma_w2


@dataclass(frozen=True)
class SensingStats:
    """Calibrated detector and all derived sensing-outcome probabilities.

    ``beta0 = Pr{H0, H0^}``, ``beta1 = Pr{H1, H0^}``; ``omega_l`` are the
    posteriors given a sensed-idle outcome and ``sigma_l`` (the varsigma's)
    the posteriors given a sensed-busy outcome.
    """

    N_se: float
    M: int
    eta: float
    theta_sen: float
    sigma_sen: float
    Pfa_bar: float
    Pd_bar: float
    pi0: float
    pi1: float
    beta0: float
    beta1: float
    pihat0: float
    pihat1: float
    omega0: float
    omega1: float
    sigma0: float
    sigma1: float

    @property
    def beta(self):
        return (self.beta0, self.beta1)

    @property
    def omega(self):
        return (self.omega0, self.omega1)


def centering_scaling(M, N_se):
    """TW2 centering and scaling of ``lambda_max / sigma_w^2`` under H0."""
    r = np.sqrt(M / N_se)
    theta = (1.0 + r) ** 2
    sigma = (1.0 + r) * (N_se ** -0.5 + M ** -0.5) ** (1.0 / 3.0) / np.sqrt(N_se)
    return theta, sigma


def false_alarm_prob(eta, M, N_se):
    theta, sigma = centering_scaling(M, N_se)
    return 1.0 - tw2_cdf((np.asarray(eta, dtype=float) - theta) / sigma)


def detectability_threshold(M, N_se):
    """Spike strength ``sqrt(M/N_se)`` below which ``lambda_max`` stays in
    the noise bulk."""
    return np.sqrt(M / N_se)


def _gauss_arg(eta, delta, M, N_se):
    rn = np.sqrt(N_se)
    return eta * rn / (1.0 + delta) - (M - 1) / (delta * rn) - rn


def _turning_point(eta, M, N_se):
    # delta at which the Gaussian argument peaks; inf if it never turns
    r = np.sqrt((M - 1) / (eta * N_se)) if eta > 0 else np.inf
    return r / (1.0 - r) if r < 1 else np.inf


def detection_prob_given_psi(eta, delta_sen, M, N_se, model="verbatim"):
    """Detection probability for a given spike SNR ``P_p ||psi||^2/sigma_w^2``.

    ``model="verbatim"`` is the Gaussian large-sample law of
    ``lambda_max``. It is increasing in ``delta_sen`` only above the
    turning point of its argument and tends to 1 as ``delta_sen -> 0``.

    ``model="gated"`` returns the false-alarm probability below the
    detectability threshold ``sqrt(M/N_se)`` (the spike is invisible in the
    noise bulk there), holds the argument at the turning point, and floors
    the result at the false-alarm probability; it is non-decreasing
    everywhere.
    """
    delta = np.asarray(delta_sen, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("delta_sen must be positive")
    if model == "verbatim":
        out = q_function(_gauss_arg(eta, delta, M, N_se))
        return out if np.ndim(out) else float(out)
    if model != "gated":
        raise ValueError(f"unknown model {model!r}")
    pfa = false_alarm_prob(eta, M, N_se)
    dstar = _turning_point(eta, M, N_se)
    if not np.isfinite(dstar):
        out = np.full_like(delta, pfa)
        return out if out.ndim else float(out)
    x = _gauss_arg(eta, np.maximum(delta, dstar), M, N_se)
    pd = np.maximum(q_function(x), pfa)
    out = np.where(delta > detectability_threshold(M, N_se), pd, pfa)
    return out if out.ndim else float(out)


def _phi_rule(antenna: AntennaConfig, nodes=_PHI_NODES):
    x, w = np.polynomial.legendre.leggauss(nodes)
    phi = antenna.phi1 + (x + 1.0) * antenna.span / 2.0
    return phi, w / 2.0


def average_detection_prob(eta, cfg: SensingConfig, antenna: AntennaConfig,
                           phi_nodes=_PHI_NODES, g_nodes=_G_NODES):
    """Average of the detection probability over ``g ~ Exp(gamma)`` and a
    uniform PU direction.

    Gauss-Legendre in direction. In g the substitution
    ``u = exp(-(g - g0)/gamma)`` maps the exponential weight onto ``[0, 1]``
    for Gauss-Legendre, after splitting at the points where the integrand
    has kinks or a sharp transition.
    """
    if cfg.pd_model == "gated":
        return _average_pd_gated(eta, cfg, antenna, phi_nodes, g_nodes)
    M, N = antenna.M, cfg.N_se
    phi, wphi = _phi_rule(antenna, phi_nodes)
    rate = cfg.snr_scale * antenna.sum_pattern(phi) * cfg.gamma
    brk = _verbatim_breakpoints(eta, M, N)
    x, wx = np.polynomial.legendre.leggauss(g_nodes)
    total = np.zeros_like(rate)
    for a, b in zip([0.0] + brk[:-1], brk):
        d = a + (x + 1.0) * (b - a) / 2.0
        dens = np.exp(-np.outer(1.0 / rate, d)) / rate[:, None]
        total += dens @ (q_function(_gauss_arg(eta, d, M, N)) * wx
                         * (b - a) / 2.0)
    # tail: u = exp(-(delta - d_last)/rate)
    u, wu = (x + 1.0) / 2.0, wx / 2.0
    d_last = brk[-1]
    delta_hi = d_last - np.outer(rate, np.log(u))
    total += np.exp(-d_last / rate) * (
        q_function(_gauss_arg(eta, delta_hi, M, N)) @ wu)
    return float(np.dot(wphi, total))


def _verbatim_breakpoints(eta, M, N):
    """Turning point of the Gaussian argument plus bands around each of its
    zero crossings, where ``Q`` switches between 0 and 1."""
    dstar = _turning_point(eta, M, N)
    if not np.isfinite(dstar):
        return [detectability_threshold(M, N)]
    if M == 1:
        # argument decreases monotonically and crosses zero at eta - 1
        if eta <= 1.0:
            return [1.0]
        root = eta - 1.0
        w = 8.0 * (1.0 + root) ** 2 / (eta * np.sqrt(N))
        return sorted(b for b in (root - w, root, root + w) if b > 0)
    brk = [dstar]
    f = lambda d: float(_gauss_arg(eta, d, M, N))
    if f(dstar) > 0:
        rn = np.sqrt(N)
        for lo, hi in ((dstar * 1e-12, dstar), (dstar, None)):
            if hi is None:
                hi = 2.0 * dstar + 1.0
                while f(hi) > 0:
                    hi *= 2.0
            root = brentq(f, lo, hi, xtol=1e-15, rtol=1e-12)
            slope = abs(-eta * rn / (1 + root) ** 2
                        + (M - 1) / (root ** 2 * rn))
            w = 8.0 / slope
            brk += [root - w, root + w]
    return sorted(b for b in set(brk) if b > 0)


def _average_pd_gated(eta, cfg, antenna, phi_nodes, g_nodes):
    M, N = antenna.M, cfg.N_se
    pfa = float(false_alarm_prob(eta, M, N))
    dstar = _turning_point(eta, M, N)
    if not np.isfinite(dstar):
        return pfa
    dgate = detectability_threshold(M, N)
    d0 = max(dgate, dstar)
    phi, wphi = _phi_rule(antenna, phi_nodes)
    scale = cfg.snr_scale * antenna.sum_pattern(phi)  # delta = scale * g
    p_gate = np.exp(-dgate / (scale * cfg.gamma))
    p0 = np.exp(-d0 / (scale * cfg.gamma))
    val = pfa * (1.0 - p_gate)
    if dstar > dgate:
        flat = max(float(q_function(_gauss_arg(eta, dstar, M, N))), pfa)
        val = val + flat * (p_gate - p0)
    u, wu = np.polynomial.legendre.leggauss(g_nodes)
    u, wu = (u + 1.0) / 2.0, wu / 2.0
    # delta over (direction, node): d0 + scale * gamma * (-ln u)
    delta = d0 - np.outer(scale * cfg.gamma, np.log(u))
    pd = np.maximum(q_function(_gauss_arg(eta, delta, M, N)), pfa)
    val = val + p0 * (pd @ wu)
    return float(np.dot(wphi, val))


def sensing_stats_from_eta(eta, cfg: SensingConfig, antenna: AntennaConfig,
                           Pd_bar=None) -> SensingStats:
    M, N = antenna.M, cfg.N_se
    theta, sigma = centering_scaling(M, N)
    pfa = float(false_alarm_prob(eta, M, N))
    pd = average_detection_prob(eta, cfg, antenna) if Pd_bar is None else Pd_bar
    pi0, pi1 = cfg.pi0, cfg.pi1
    beta0 = pi0 * (1.0 - pfa)
    beta1 = pi1 * (1.0 - pd)
    pihat0 = beta0 + beta1
    pihat1 = 1.0 - pihat0
    if pihat0 <= 0:
        raise CalibrationError(
            f"threshold {eta:g} never declares the band idle")
    omega0 = beta0 / pihat0
    sigma0 = pi0 * pfa / pihat1 if pihat1 > 0 else 0.0
    return SensingStats(
        N_se=N, M=M, eta=float(eta), theta_sen=float(theta),
        sigma_sen=float(sigma), Pfa_bar=pfa, Pd_bar=float(pd), pi0=pi0,
        pi1=pi1, beta0=beta0, beta1=beta1, pihat0=pihat0, pihat1=pihat1,
        omega0=omega0, omega1=1.0 - omega0, sigma0=sigma0,
        sigma1=1.0 - sigma0)


def calibrate_threshold(cfg: SensingConfig, antenna: AntennaConfig,
                        tol: float = 1e-6) -> SensingStats:
    """Solve ``average_detection_prob(eta) = target`` for the threshold."""
    target = cfg.target_Pd_bar
    M, N = antenna.M, cfg.N_se

    def gap(eta):
        return average_detection_prob(eta, cfg, antenna) - target

    lo = 1e-9
    top = gap(lo) + target
    if top < target:
        raise CalibrationError(
            f"target P_d {target} unreachable with N_se={N}; achievable "
            f"range is (0, {top:.6f}]")
    theta, sigma = centering_scaling(M, N)
    hi = theta + 6.0 * sigma
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e8:
            raise CalibrationError("failed to bracket the threshold")
    eta = brentq(gap, lo, hi, xtol=1e-13, rtol=1e-13, maxiter=200)
    pd = average_detection_prob(eta, cfg, antenna)
    if abs(pd - target) > tol:
        raise CalibrationError(
            f"threshold calibration missed target by {abs(pd - target):.3g}")
    return sensing_stats_from_eta(eta, cfg, antenna, Pd_bar=pd)
