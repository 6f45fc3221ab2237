"""Gaussian beampattern model of an M-beam reconfigurable antenna."""

from dataclasses import dataclass

import numpy as np

__all__ = ["AntennaConfig", "build_geometry", "base_pattern", "pattern_gain",
           "sector_of"]

LN2 = np.log(2.0)


@dataclass(frozen=True)
class AntennaConfig:
    """Beam count, pattern constants and angular sector layout.

    All angles are in radians. Beam indices are 0-based.

    Attributes
    ----------
    M : int
        Number of beams.
    A0, A1 : float
        Pattern constants; the gain spans ``[A1, A1 + A0]``.
    phi3dB : float
        3-dB parameter of the Gaussian lobe.
    phi1, phi2 : float
        Limits of the covered angular span.
    kappa : tuple of float
        Beam-center angles, strictly increasing.
    sectors : tuple of (float, float)
        Half-open intervals ``[lo, hi)`` partitioning ``(phi1, phi2)``.
    """

    M: int
    A0: float
    A1: float
    phi3dB: float
    phi1: float
    phi2: float
    kappa: tuple
    sectors: tuple

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be a positive integer")
        if not (self.A0 > 0 and self.A1 >= 0 and self.phi3dB > 0):
            raise ValueError("need A0 > 0, A1 >= 0, phi3dB > 0")
        if not self.phi1 < self.phi2:
            raise ValueError("need phi1 < phi2")
        if len(self.kappa) != self.M or len(self.sectors) != self.M:
            raise ValueError("kappa and sectors must have M entries")
        if np.any(np.diff(self.kappa) <= 0):
            raise ValueError("kappa must be strictly increasing")
        for k, (lo, hi) in zip(self.kappa, self.sectors):
            if not lo <= k < hi:
                raise ValueError("each beam center must lie in its sector")

    @property
    def kappa_array(self) -> np.ndarray:
        return np.asarray(self.kappa, dtype=float)

    @property
    def span(self) -> float:
        return self.phi2 - self.phi1

    def gain_matrix(self) -> np.ndarray:
        """``G[j, i] = p(kappa_j - kappa_i)``: gain of beam j toward the
        center of sector i."""
        k = self.kappa_array
        return base_pattern(k[:, None] - k[None, :], self)

    def sum_pattern(self, phi) -> np.ndarray:
        """Sum of all beam gains toward ``phi``."""
        phi = np.asarray(phi, dtype=float)
        return base_pattern(phi[..., None] - self.kappa_array, self).sum(-1)


def build_geometry(M: int, phi1: float, phi2: float, A0: float = 0.98,
                   A1: float = 0.02, phi3dB: float = np.deg2rad(20.0)
                   ) -> AntennaConfig:
    """Place M beams uniformly over ``(phi1, phi2)``.

    Beam m is centered in the middle of the m-th of M equal-width sectors.
    Passing ``(0, 2*pi)`` gives the full-circle layout.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not phi2 > phi1:
        raise ValueError("angular span must be positive")
    width = (phi2 - phi1) / M
    edges = phi1 + width * np.arange(M + 1)
    edges[-1] = phi2
    kappa = tuple(float(phi1 + (m + 0.5) * width) for m in range(M))
    sectors = tuple((float(edges[m]), float(edges[m + 1])) for m in range(M))
    return AntennaConfig(M=M, A0=A0, A1=A1, phi3dB=phi3dB, phi1=phi1,
                         phi2=phi2, kappa=kappa, sectors=sectors)


def _wrap(phi):
    return np.mod(phi + np.pi, 2 * np.pi) - np.pi


def base_pattern(phi, cfg: AntennaConfig):
    """Unsteered pattern ``A1 + A0 exp(-ln2 (wrap(phi)/phi3dB)^2)``."""
    x = _wrap(np.asarray(phi, dtype=float)) / cfg.phi3dB
    return cfg.A1 + cfg.A0 * np.exp(-LN2 * x * x)


def pattern_gain(phi, beam: int, cfg: AntennaConfig):
    """Gain of beam ``beam`` (0-based) in direction ``phi``."""
    if not 0 <= beam < cfg.M:
        raise IndexError(f"beam {beam} out of range for M={cfg.M}")
    return base_pattern(np.asarray(phi, dtype=float) - cfg.kappa[beam], cfg)


def sector_of(phi, cfg: AntennaConfig):
    """Index of the sector containing ``phi`` (clipped into the span)."""
    phi = np.asarray(phi, dtype=float)
    idx = np.floor((phi - cfg.phi1) / cfg.span * cfg.M).astype(int)
    idx = np.clip(idx, 0, cfg.M - 1)
    # floor can disagree with the stored edges by one ulp
    lo = np.array([s[0] for s in cfg.sectors])[idx]
    hi = np.array([s[1] for s in cfg.sectors])[idx]
    idx = np.where((phi < lo) & (idx > 0), idx - 1, idx)
    idx = np.where((phi >= hi) & (idx < cfg.M - 1), idx + 1, idx)
    return idx
