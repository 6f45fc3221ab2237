"""Special functions and quadrature helpers.

The Tracy-Widom (beta=2) CDF is served from a tabulated asset
(``data/tw2_cdf.txt``) through a monotone cubic interpolant. The table itself
is produced by :func:`tw2_cdf_fredholm`, which evaluates the Fredholm
determinant of the Airy kernel with Gauss-Legendre discretization
(Bornemann's method).
"""

from functools import lru_cache
from importlib import resources
import math
import warnings

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

__all__ = ["NumericalError", "TracyWidomTable", "tw2_table", "tw2_cdf",
           "tw2_ppf", "tw2_cdf_fredholm", "write_tw2_table", "q_function",
           "exp_integral_ei", "scaled_exp1", "integrate_semiinf"]

TW2_TABLE_VERSION = 1
TW2_GRID = (-10.0, 6.0, 1601)


class NumericalError(RuntimeError):
    """Raised when a numerical routine fails; carries the best estimate."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


def tw2_cdf_fredholm(s, nodes: int = 80, length: float = 14.0) -> float:
    """F_TW2(s) = det(I - K_Airy) on L^2(s, inf), computed directly.

    The kernel is truncated to ``[s, s + length]``; the Airy functions decay
    like ``exp(-2/3 x^1.5)`` so 14 units already exceeds double precision.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = s + (x + 1.0) * (length / 2.0)
    w = w * (length / 2.0)
    ai, aip, _, _ = special.airy(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    K = (ai[:, None] * aip[None, :] - aip[:, None] * ai[None, :]) / diff
    np.fill_diagonal(K, aip ** 2 - x * ai ** 2)
    sw = np.sqrt(w)
    return float(np.linalg.det(np.eye(nodes) - sw[:, None] * K * sw[None, :]))


def write_tw2_table(path, grid=TW2_GRID):
    lo, hi, n = grid
    s = np.linspace(lo, hi, n)
    F = np.array([tw2_cdf_fredholm(v) for v in s])
    F = np.clip(np.maximum.accumulate(F), 0.0, 1.0)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# Tracy-Widom beta=2 CDF, table version {TW2_TABLE_VERSION}\n")
        fh.write("# columns: s F_TW2(s); Airy-kernel Fredholm determinant, "
                 "80-point Gauss-Legendre on [s, s+14]\n")
        for a, b in zip(s, F):
            fh.write(f"{a:.2f} {b:.17e}\n")


class TracyWidomTable:
    """Immutable tabulated TW2 CDF with monotone (PCHIP) interpolation."""

    def __init__(self, grid: np.ndarray, cdf: np.ndarray):
        grid = np.asarray(grid, dtype=float)
        cdf = np.asarray(cdf, dtype=float)
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(np.diff(cdf) < 0):
            raise ValueError("cdf must be non-decreasing")
        self.grid = grid
        self.cdf = cdf
        self._interp = PchipInterpolator(grid, cdf, extrapolate=False)
        self._pdf = self._interp.derivative()

    @classmethod
    def load(cls, path=None):
        if path is None:
            text = resources.files("cograte").joinpath(
                "data/tw2_cdf.txt").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        rows = [ln.split() for ln in text.splitlines()
                if ln.strip() and not ln.startswith("#")]
        arr = np.array(rows, dtype=float)
        return cls(arr[:, 0], arr[:, 1])

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(np.isnan(s)):
            raise ValueError("tw2_cdf: NaN argument")
        sc = np.clip(s, self.grid[0], self.grid[-1])
        out = np.clip(self._interp(sc), 0.0, 1.0)
        return out if out.ndim else float(out)

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s >= self.grid[0]) & (s <= self.grid[-1])
        out = np.where(inside, self._pdf(np.clip(s, self.grid[0],
                                                 self.grid[-1])), 0.0)
        return np.maximum(out, 0.0)

    def ppf(self, p: float, tol: float = 1e-10) -> float:
        """Inverse CDF by bisection on the interpolant."""
        if not 0.0 < p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        lo, hi = self.grid[0], self.grid[-1]
        if p <= self(lo):
            return lo
        if p >= self(hi):
            return hi
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if self(mid) < p:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


@lru_cache(maxsize=1)
def tw2_table() -> TracyWidomTable:
    return TracyWidomTable.load()


def tw2_cdf(s):
    return tw2_table()(s)


def tw2_ppf(p):
    return tw2_table().ppf(p)


def q_function(x):
    """Gaussian tail probability Q(x) = 0.5 erfc(x / sqrt 2)."""
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise ValueError("q_function: NaN argument")
    out = special.ndtr(-x)
    return out if out.ndim else float(out)


def exp_integral_ei(x):
    """Principal-value exponential integral Ei(x); Ei(x) = -E1(-x) for x<0."""
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise ValueError("Ei is singular at 0")
    if np.any(np.isnan(x)):
        raise ValueError("exp_integral_ei: NaN argument")
    out = special.expi(x)
    return out if out.ndim else float(out)


def scaled_exp1(z):
    """``exp(z) E1(z)`` for ``z > 0``, finite for large ``z`` (0 at inf)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0) or np.any(np.isnan(z)):
        raise ValueError("scaled_exp1 needs z > 0")
    small = z < 600.0
    out = np.empty_like(z)
    zs = z[small]
    out[small] = np.exp(zs) * special.exp1(zs)
    zl = z[~small]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / zl
        acc = np.zeros_like(zl)
        term = np.ones_like(zl)
        for k in range(12):
            acc += term
            term = -term * (k + 1) * inv
        out[~small] = np.where(np.isinf(zl), 0.0, acc * inv)
    return out if out.ndim else float(out)


def integrate_semiinf(f, tol: float = 1e-8, lower: float = 0.0,
                      points=None, limit: int = 500) -> float:
    """Adaptive integral of ``f`` over ``[lower, inf)``.

    ``points`` lists interior breakpoints (discontinuities, kinks); the
    finite part up to the last breakpoint is integrated separately from the
    semi-infinite tail.
    """
    pieces = [lower] + sorted(p for p in (points or ()) if p > lower)
    total, err_total = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(pieces[:-1], pieces[1:]):
            val, err, info = integrate.quad(f, a, b, epsabs=0.0, epsrel=tol,
                                            limit=limit, full_output=True)[:3]
            total += val
            err_total += err
        val, err, info, *rest = integrate.quad(
            f, pieces[-1], np.inf, epsabs=0.0, epsrel=tol, limit=limit,
            full_output=True)
        total += val
        err_total += err
    scale = max(abs(total), 1e-300)
    if not math.isfinite(total) or err_total > max(10 * tol * scale, 1e-14):
        raise NumericalError(
            f"quadrature did not converge (estimate {total!r}, "
            f"error {err_total:.3g})", estimate=total)
    return total


if __name__ == "__main__":  # pragma: no cover
    import sys
    write_tw2_table(sys.argv[1] if len(sys.argv) > 1 else "tw2_cdf.txt")
