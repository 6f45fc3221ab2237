"""Error statistics of locating the PU beam from per-beam received energies.

Energies are modeled by their large-sample Gaussian laws: under H0 every beam
sees ``N(sigma_w^2, sigma_w^4/N_se)``; under H1 beam m has mean
``gamma P_p p_m(phi) + sigma_w^2`` and the three-term variance of a
fast-faded spike plus noise.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .antenna import AntennaConfig, base_pattern
from .sensing import SensingConfig, SensingStats

__all__ = ["EnergyStats", "energy_stats", "BeamErrorMatrix",
           "delta_vector", "delta_given_phi", "delta_bar_matrix"]

_SECTOR_NODES = 64
_Y_PANEL_NODES = 8
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class EnergyStats:
    mean_h0: float
    var_h0: float
    mean_h1: np.ndarray
    var_h1: np.ndarray


def energy_stats(phi_pu, cfg: SensingConfig, antenna: AntennaConfig
                 ) -> EnergyStats:
    """Per-beam energy means and variances; ``phi_pu`` may be an array, in
    which case the H1 fields have shape ``phi_pu.shape + (M,)``."""
    phi = np.asarray(phi_pu, dtype=float)
    p = base_pattern(phi[..., None] - antenna.kappa_array, antenna)
    sw2, N = cfg.sigma_w2, cfg.N_se
    s = cfg.P_p * cfg.gamma * p
    return EnergyStats(
        mean_h0=sw2, var_h0=sw2 ** 2 / N,
        mean_h1=s + sw2,
        var_h1=(sw2 ** 2 + 3.0 * s ** 2 + 2.0 * sw2 * s) / N)


@dataclass(frozen=True)
class BeamErrorMatrix:
    """``delta_bar[i, m]``: probability of detecting beam i while the PU lies
    in sector m, given a sensed-busy outcome."""

    delta_bar: np.ndarray

    @property
    def M(self) -> int:
        return self.delta_bar.shape[0]

    def true_sector_marginal(self) -> np.ndarray:
        return self.delta_bar.sum(axis=0)

    def to_csv(self, path, header_comment=None):
        M = self.M
        with open(path, "w", newline="\n") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("detected_beam," + ",".join(
                f"true_sector_{m}[prob]" for m in range(M)) + "\n")
            for i in range(M):
                fh.write(f"{i}," + ",".join(
                    f"{v:.12e}" for v in self.delta_bar[i]) + "\n")


def _h1_argmax_probs(mean, sd, truncate=False):
    """``I_i = int f_i(y) prod_{m != i} F_m(y) dy`` for Gaussian f/F,
    vectorized over leading axes of ``mean``/``sd`` (last axis = beam).
    The integral runs over the real line, or over ``y >= 0`` with
    ``truncate``.
    """
    lead = mean.shape[:-1]
    mean2 = mean.reshape(-1, mean.shape[-1])
    sd2 = sd.reshape(-1, sd.shape[-1])
    out = np.empty_like(mean2)
    xg, wg = np.polynomial.legendre.leggauss(_Y_PANEL_NODES)
    for k in range(mean2.shape[0]):
        mu, s = mean2[k], sd2[k]
        lo = float(np.min(mu - 12.0 * s))
        if truncate:
            lo = max(lo, 0.0)
        hi = float(np.max(mu + 12.0 * s))
        n_panels = int(np.clip(np.ceil((hi - lo) / (0.5 * s.min())), 16, 4000))
        edges = np.linspace(lo, hi, n_panels + 1)
        half = 0.5 * np.diff(edges)
        y = (edges[:-1, None] + half[:, None] * (xg + 1.0)).ravel()
        w = (half[:, None] * wg).ravel()
        z = (y[:, None] - mu) / s
        logF = log_ndtr(z)
        logf = -0.5 * z * z - _LOG_SQRT_2PI - np.log(s)
        total = logF.sum(axis=1, keepdims=True)
        integrand = np.exp(logf + total - logF)
        out[k] = w @ integrand
    return out.reshape(lead + (mean.shape[-1],))


def delta_vector(phi_pu, stats: SensingStats, cfg: SensingConfig,
                 antenna: AntennaConfig, truncate: bool = False
                 ) -> np.ndarray:
    """All ``Delta_i(phi_pu)``, i = 0..M-1 (last axis).

    The argmax integrals run over the whole line so that the entries sum
    to one. ``truncate=True`` starts them at zero energy instead, dropping
    the (small) mass the Gaussian energy model puts below zero.
    """
    es = energy_stats(phi_pu, cfg, antenna)
    h1 = _h1_argmax_probs(es.mean_h1, np.sqrt(es.var_h1), truncate)
    M = antenna.M
    if truncate:
        # iid H0 energies: int_0^inf f F^{M-1} = (1 - F(0)^M) / M
        f0_at_zero = ndtr(-es.mean_h0 / np.sqrt(es.var_h0))
        h0 = (1.0 - f0_at_zero ** M) / M
    else:
        h0 = 1.0 / M
    return stats.sigma1 * h1 + stats.sigma0 * h0


def delta_given_phi(i: int, phi_pu: float, stats: SensingStats,
                    cfg: SensingConfig, antenna: AntennaConfig) -> float:
    """Probability that beam ``i`` is declared the PU beam given
    ``phi_pu`` and a sensed-busy outcome."""
    if not 0 <= i < antenna.M:
        raise IndexError(f"beam {i} out of range for M={antenna.M}")
    return float(delta_vector(float(phi_pu), stats, cfg, antenna)[i])


def delta_bar_matrix(stats: SensingStats, cfg: SensingConfig,
                     antenna: AntennaConfig, nodes: int = _SECTOR_NODES,
                     truncate: bool = False) -> BeamErrorMatrix:
    """Average ``Delta_i`` over each sector against a uniform PU prior."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    M = antenna.M
    phis, weights = [], []
    for lo, hi in antenna.sectors:
        phis.append(lo + (x + 1.0) * (hi - lo) / 2.0)
        weights.append(w * (hi - lo) / 2.0 / antenna.span)
    phis = np.array(phis)                       # (M, nodes)
    dv = delta_vector(phis, stats, cfg, antenna, truncate)  # (M, nodes, M)
    mat = np.einsum("mn,mni->im", np.array(weights), dv)
    return BeamErrorMatrix(delta_bar=mat)
