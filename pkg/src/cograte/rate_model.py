"""Achievable-rate lower bound, average power/interference functionals and
the two threshold power schemes.

All functionals take a power policy ``P(nu)`` of the selected estimated gain
and average it against the per-beam joint weights
``f_j(nu) prod_{m != j} F_m(nu)`` under each hypothesis.
"""

from dataclasses import dataclass
import math

import numpy as np

from .antenna import AntennaConfig
from .beam_detect import BeamErrorMatrix
from .sensing import SensingStats
from .specfun import NumericalError, exp_integral_ei, integrate_semiinf, \
    scaled_exp1
from .training import EstimatorStats, SelectionStats

__all__ = [
    "FramePlan", "GriddedPolicy", "Scheme1Policy", "Scheme2Policy",
    "Constraints", "InfeasibleBudgetError", "GainGrid", "gain_grid",
    "interference_coeffs", "noise_variances", "lmmse_symbol_mse",
    "rate_lower_bound", "scheme1_rate", "scheme_power_levels",
    "scheme2_T", "scheme2_G", "expected_power", "atpc_lhs", "aic_lhs",
    "outage_probability", "log_expectation_tail",
]

LN2 = math.log(2.0)
DEFAULT_GRID_NODES = 2000
GRID_SPAN_MULT = 40.0
PI_CEILING = 1e4


class InfeasibleBudgetError(ValueError):
    """A budget is already consumed by the training phase."""

    def __init__(self, message, budget):
        super().__init__(message)
        self.budget = budget


@dataclass(frozen=True)
class FramePlan:
    """Frame split into sensing, training and data phases.

    ``N_se`` and ``N_tr`` are samples per beam and may be non-integer while
    durations are searched continuously.
    """

    T_f: float
    T_s: float
    N_se: float
    N_tr: float
    M: int

    def __post_init__(self):
        if self.N_se <= 0 or self.N_tr <= 0:
            raise ValueError("N_se and N_tr must be positive")
        if self.T_d <= 0:
            raise ValueError(
                f"no data phase left: T_se + T_tr = {self.T_se + self.T_tr}"
                f" >= T_f = {self.T_f}")

    @classmethod
    def from_durations(cls, T_f, T_s, T_se, T_tr, M):
        return cls(T_f, T_s, T_se / (M * T_s), T_tr / (M * T_s), M)

    @property
    def T_se(self):
        return self.M * self.N_se * self.T_s

    @property
    def T_tr(self):
        return self.M * self.N_tr * self.T_s

    @property
    def T_d(self):
        return self.T_f - self.T_se - self.T_tr

    @property
    def D_d(self):
        return self.T_d / self.T_f

    @property
    def D_tr(self):
        return self.T_tr / self.T_f

    @property
    def D_se(self):
        return self.T_se / self.T_f


@dataclass(frozen=True)
class GriddedPolicy:
    """Piecewise-linear power on increasing gain nodes, zero below the first
    node and held at the last value beyond the last node."""

    nu_grid: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu_grid, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if nu.shape != P.shape or nu.ndim != 1:
            raise ValueError("nu_grid and P must be 1-D of equal length")
        if np.any(np.diff(nu) <= 0):
            raise ValueError("nu_grid must be strictly increasing")
        if np.any(P < 0):
            raise ValueError("powers must be nonnegative")
        object.__setattr__(self, "nu_grid", nu)
        object.__setattr__(self, "P", P)

    def power(self, nu):
        return np.interp(nu, self.nu_grid, self.P, left=0.0, right=self.P[-1])

    @property
    def tail_power(self):
        return float(self.P[-1])


@dataclass(frozen=True)
class Scheme1Policy:
    """On-off: ``Pi1`` above ``zeta1``, silent below."""

    Pi1: float
    zeta1: float

    def __post_init__(self):
        if self.Pi1 < 0 or self.zeta1 < 0:
            raise ValueError("Pi1 and zeta1 must be nonnegative")

    def power(self, nu):
        nu = np.asarray(nu, dtype=float)
        return np.where(nu >= self.zeta1, self.Pi1, 0.0)


@dataclass(frozen=True)
class Scheme2Policy:
    """Soft threshold ``Pi2 (1 - zeta2/nu)`` above ``zeta2``."""

    Pi2: float
    zeta2: float

    def __post_init__(self):
        if self.Pi2 < 0 or self.zeta2 < 0:
            raise ValueError("Pi2 and zeta2 must be nonnegative")

    def power(self, nu):
        nu = np.asarray(nu, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = self.Pi2 * (1.0 - self.zeta2 / nu)
        return np.where(nu >= self.zeta2, np.maximum(p, 0.0), 0.0)


@dataclass(frozen=True)
class Constraints:
    P_av_bar: float
    I_av_bar: float
    b0: float
    u0: float
    conditioning_mode: str = "marginal"

    def __post_init__(self):
        if self.P_av_bar <= 0 or self.I_av_bar <= 0:
            raise ValueError("budgets must be positive")
        if self.b0 < 0 or self.u0 < 0:
            raise ValueError("interference coefficients must be nonnegative")
        if self.b0 > self.u0 * (1 + 1e-12) + 1e-300:
            raise ValueError("b0 must not exceed u0")


def interference_coeffs(delta_bar: BeamErrorMatrix, sel: SelectionStats,
                        sstats: SensingStats, antenna: AntennaConfig,
                        gamma: float, mode: str = "marginal",
                        detected_beam: int = None):
    """Return ``(b0, u0)``.

    ``mode="marginal"`` weights true sector i by ``sum_d delta_bar[d, i]``;
    ``mode="given_detected_beam"`` uses row ``detected_beam`` as is.
    """
    D = np.asarray(delta_bar.delta_bar)
    M = antenna.M
    if D.shape != (M, M) or len(sel.Psi1) != M:
        raise ValueError(f"dimension mismatch: delta_bar {D.shape}, "
                         f"Psi {len(sel.Psi1)}, M {M}")
    if mode == "marginal":
        weight = D.sum(axis=0)
    elif mode == "given_detected_beam":
        if detected_beam is None or not 0 <= detected_beam < M:
            raise ValueError("given_detected_beam mode needs a valid beam")
        weight = D[detected_beam]
    else:
        raise ValueError(f"unknown conditioning mode {mode!r}")
    G = antenna.gain_matrix()          # G[j, i] = p(kappa_j - kappa_i)
    toward = G @ weight                # per transmit beam j
    b0 = sstats.beta1 * gamma * math.fsum(sel.Psi1 * toward)
    u0 = sstats.beta1 * gamma * math.fsum(toward)
    return b0, u0


def noise_variances(P, estats: EstimatorStats) -> np.ndarray:
    """``sigma_eta2[i, l] = alpha_tilde^l_i P + sigma_q2 + l sigma_p2``."""
    return np.stack([estats.tilde(ell) * P + estats.noise_floor(ell)
                     for ell in (0, 1)], axis=-1)


def lmmse_symbol_mse(P, nu, sigma_eta2):
    """MSE of the LMMSE data-symbol estimate, bounded above by ``P``."""
    return P * sigma_eta2 / (nu * P + sigma_eta2)


# --- gain quadrature grid -------------------------------------------------

@dataclass(frozen=True)
class GainGrid:
    """Composite Gauss-Legendre nodes on ``[0, upper]`` with the per-beam
    joint weights precomputed under both hypotheses."""

    nodes: np.ndarray
    weights: np.ndarray
    upper: float
    beam_w: tuple       # (n, M) arrays for H0, H1
    log_beam_w: tuple

    @property
    def pdf(self):
        return tuple(w.sum(-1) for w in self.beam_w)


def gain_grid(sel: SelectionStats, n_nodes: int = DEFAULT_GRID_NODES,
              span_mult: float = GRID_SPAN_MULT, order: int = 8) -> GainGrid:
    panels = max(1, n_nodes // order)
    upper = span_mult * sel.mean_nu_star
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    nodes = (edges[:-1, None] + half[:, None] * (x + 1.0)).ravel()
    weights = (half[:, None] * w).ravel()
    logs = tuple(sel.log_beam_weights(nodes, ell) for ell in (0, 1))
    return GainGrid(nodes=nodes, weights=weights, upper=upper,
                    beam_w=tuple(np.exp(l) for l in logs), log_beam_w=logs)


def log_expectation_tail(a, b, lower):
    """``int_lower^inf ln(1 + b x) exp(-x/a)/a dx`` (vectorized, ``b >= 0``)."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    out = np.zeros(a.shape)
    pos = b > 0
    if np.any(pos):
        ap, bp = a[pos], b[pos]
        z = lower / ap + 1.0 / (ap * bp)
        out[pos] = np.exp(-lower / ap) * (np.log1p(bp * lower)
                                          + scaled_exp1(z))
    return out if out.ndim else float(out)


def _snr(P, estats, ell):
    return P / (estats.tilde(ell) * P + estats.noise_floor(ell))


def _grid_rate(P_nodes, grid, estats, sstats):
    """``sum_l beta_l sum_j int ln(1 + y P/(tilde_j P + c_l)) w_j dy`` (nats)."""
    y, wq = grid.nodes, grid.weights
    total = 0.0
    for ell, beta in ((0, sstats.beta0), (1, sstats.beta1)):
        snr = _snr(P_nodes[:, None], estats, ell)
        integrand = (np.log1p(y[:, None] * snr) * grid.beam_w[ell]).sum(-1)
        total += beta * float(wq @ integrand)
    return total


def _grid_tail_rate(P_last, grid, estats, sel, sstats):
    if P_last <= 0:
        return 0.0
    total = 0.0
    for ell, beta in ((0, sstats.beta0), (1, sstats.beta1)):
        snr = _snr(P_last, estats, ell)
        total += beta * float(np.sum(log_expectation_tail(
            sel.alpha_hat[ell], snr, grid.upper)))
    return total


def _as_grid_policy(policy, grid):
    if isinstance(policy, GriddedPolicy):
        if (policy.nu_grid.shape == grid.nodes.shape
                and np.array_equal(policy.nu_grid, grid.nodes)):
            return policy.P, policy.tail_power
        return policy.power(grid.nodes), policy.tail_power
    return np.asarray(policy.power(grid.nodes), float), None


def rate_lower_bound(policy, plan: FramePlan, estats: EstimatorStats,
                     sel: SelectionStats, sstats: SensingStats,
                     grid: GainGrid = None, method: str = "auto") -> float:
    """Rate lower bound in bits/s/Hz.

    ``method``: ``"auto"`` uses the closed form for on-off policies and the
    gain grid otherwise; ``"quad"`` forces adaptive quadrature;
    ``"grid"`` forces the fixed grid.
    """
    if method == "auto" and isinstance(policy, Scheme1Policy):
        return scheme1_rate(policy.Pi1, policy.zeta1, plan, estats, sel,
                            sstats)
    if method == "quad":
        return plan.D_d * _quad_rate(policy, estats, sel, sstats) / LN2
    if method == "auto" and isinstance(policy, Scheme2Policy):
        return plan.D_d * _scheme2_grid_rate(policy, estats, sel,
                                             sstats) / LN2
    if grid is None:
        grid = gain_grid(sel)
    P_nodes, tail_P = _as_grid_policy(policy, grid)
    nats = _grid_rate(P_nodes, grid, estats, sstats)
    if tail_P is not None:
        nats += _grid_tail_rate(tail_P, grid, estats, sel, sstats)
    return plan.D_d * nats / LN2


def _scheme2_grid_rate(policy, estats, sel, sstats,
                       n_nodes=DEFAULT_GRID_NODES, order=8):
    """Gauss-Legendre panels starting at the threshold, where the policy
    has its kink; the tail beyond the last panel holds ``P = Pi2``."""
    if policy.Pi2 == 0:
        return 0.0
    lower = policy.zeta2
    upper = lower + GRID_SPAN_MULT * sel.mean_nu_star
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lower, upper, max(1, n_nodes // order) + 1)
    half = 0.5 * np.diff(edges)
    y = (edges[:-1, None] + half[:, None] * (x + 1.0)).ravel()
    wq = (half[:, None] * w).ravel()
    P = policy.power(y)
    total = 0.0
    for ell, beta in ((0, sstats.beta0), (1, sstats.beta1)):
        bw = sel.beam_weights(y, ell)
        snr = _snr(P[:, None], estats, ell)
        total += beta * float(wq @ (np.log1p(y[:, None] * snr) * bw).sum(-1))
        total += beta * float(np.sum(log_expectation_tail(
            sel.alpha_hat[ell], _snr(policy.Pi2, estats, ell), upper)))
    return total


def _policy_breaks(policy):
    if isinstance(policy, (Scheme1Policy,)):
        return policy.zeta1, ()
    if isinstance(policy, Scheme2Policy):
        return policy.zeta2, ()
    if isinstance(policy, GriddedPolicy):
        pos = np.nonzero(policy.P > 0)[0]
        start = policy.nu_grid[pos[0]] if pos.size else np.inf
        if pos.size and pos[0] > 0:
            start = policy.nu_grid[pos[0] - 1]
        return float(start), ()
    return 0.0, ()


def _quad_rate(policy, estats, sel, sstats, tol=None):
    if tol is None:
        # interpolated policies have a kink at every grid node
        tol = 1e-7 if isinstance(policy, GriddedPolicy) else 1e-11
    lower, _ = _policy_breaks(policy)
    if not np.isfinite(lower):
        return 0.0
    scale = max(sel.alpha_hat[0].max(), sel.alpha_hat[1].max())
    points = [lower + k * scale for k in (1, 3, 10, 30)]
    total = 0.0
    for ell, beta in ((0, sstats.beta0), (1, sstats.beta1)):
        def f(y, ell=ell):
            P = float(policy.power(y))
            if P <= 0:
                return 0.0
            w = sel.beam_weights(np.array(y), ell)
            return float(np.log1p(y * _snr(P, estats, ell)) @ w)
        total += beta * integrate_semiinf(f, tol=tol, lower=lower,
                                          points=points)
    return total


def scheme1_rate(Pi1, zeta1, plan: FramePlan, estats: EstimatorStats,
                 sel: SelectionStats, sstats: SensingStats) -> float:
    """Closed-form rate of the on-off scheme (bits/s/Hz).

    Expands ``f_j prod_{m != j} F_m`` over subsets T containing j:
    ``sum_T (-1)^{|T|+1} exp(-y A_T) / alpha_hat_j``, so each term is a
    scaled log-expectation of an exponential with mean ``1/A_T``.
    """
    if Pi1 < 0 or zeta1 < 0:
        raise ValueError("Pi1 and zeta1 must be nonnegative")
    if Pi1 == 0:
        return 0.0
    bits = sel.subset_bits
    sizes = bits.sum(axis=1)
    sgn = np.where(sizes % 2 == 1, 1.0, -1.0)
    total = []
    for ell, beta in ((0, sstats.beta0), (1, sstats.beta1)):
        if beta == 0:
            continue
        a_hat = sel.alpha_hat[ell]
        A = sel.rates[ell]
        snr = _snr(Pi1, estats, ell)
        for j in range(sel.M):
            mask = bits[:, j]
            d = 1.0 / A[mask]
            terms = sgn[mask] * (d / a_hat[j]) * log_expectation_tail(
                d, snr[j], zeta1)
            total.append(beta * math.fsum(terms))
    return plan.D_d * math.fsum(total) / LN2


# --- power and interference functionals ------------------------------------

def scheme2_T(zeta2, sel: SelectionStats, ell: int) -> float:
    """``int_zeta2^inf f^l(y)/y dy`` as a signed sum of exponential
    integrals."""
    if zeta2 <= 0:
        raise ValueError("T diverges at zeta2 = 0")
    A = sel.rates[ell]
    return math.fsum(sel.signs[ell] * A * exp_integral_ei(-zeta2 * A))


def scheme2_G(zeta2, sel: SelectionStats, ell: int) -> float:
    """``F^l(zeta2) + zeta2 T^l(zeta2)``."""
    if zeta2 == 0:
        return 0.0
    return float(sel.cdf(zeta2, ell)) + zeta2 * scheme2_T(zeta2, sel, ell)


def _scheme2_survival(zeta2, sel, ell):
    """``1 - G^l(zeta2) = int_zeta2^inf (1 - zeta2/y) f^l(y) dy``."""
    if zeta2 == 0:
        return 1.0
    z = zeta2 * sel.rates[ell]
    h = 1.0 - z * scaled_exp1(z)
    return max(0.0, math.fsum(-sel.signs[ell] * np.exp(-z) * h))


def _policy_mean_fraction(policy, sel, ell, grid=None):
    """``E[P | H_l]`` for a policy."""
    if isinstance(policy, Scheme1Policy):
        return policy.Pi1 * float(sel.sf(policy.zeta1, ell))
    if isinstance(policy, Scheme2Policy):
        return policy.Pi2 * _scheme2_survival(policy.zeta2, sel, ell)
    if grid is None:
        grid = gain_grid(sel)
    P_nodes, tail_P = _as_grid_policy(policy, grid)
    val = float(grid.weights @ (P_nodes * grid.pdf[ell]))
    if tail_P:
        val += tail_P * float(sel.sf(grid.upper, ell))
    return val


def expected_power(policy, sel: SelectionStats, grid: GainGrid = None):
    """``(E[P | H0], E[P | H1])`` under a sensed-idle outcome."""
    return tuple(_policy_mean_fraction(policy, sel, ell, grid)
                 for ell in (0, 1))


def atpc_lhs(policy, plan: FramePlan, sel: SelectionStats,
             sstats: SensingStats, P_tr: float, grid: GainGrid = None
             ) -> float:
    """Average transmit power over the frame (watts)."""
    e0, e1 = expected_power(policy, sel, grid)
    return (sstats.beta0 * plan.D_d * e0 + sstats.beta1 * plan.D_d * e1
            + sstats.pihat0 * plan.D_tr * P_tr)


def aic_lhs(policy, plan: FramePlan, constraints: Constraints,
            sel: SelectionStats, sstats: SensingStats, P_tr: float,
            grid: GainGrid = None) -> float:
    """Average interference at the PU (watts)."""
    e1 = _policy_mean_fraction(policy, sel, 1, grid)
    return (plan.D_d * constraints.b0 * e1
            + plan.D_tr * constraints.u0 * P_tr)


def scheme_power_levels(zeta, which: str, plan: FramePlan,
                        sel: SelectionStats, sstats: SensingStats,
                        constraints: Constraints, P_tr: float,
                        ceiling: float = PI_CEILING) -> float:
    """Largest constant ``Pi`` meeting both budgets for a given threshold.

    Raises ``InfeasibleBudgetError`` if training alone exhausts a budget.
    """
    if zeta < 0:
        raise ValueError("threshold must be nonnegative")
    p_left = constraints.P_av_bar - sstats.pihat0 * plan.D_tr * P_tr
    i_left = constraints.I_av_bar - constraints.u0 * plan.D_tr * P_tr
    if p_left <= 0:
        raise InfeasibleBudgetError(
            "training power alone exceeds the average power budget", "ATPC")
    if i_left <= 0:
        raise InfeasibleBudgetError(
            "training interference alone exceeds the interference budget",
            "AIC")
    if which == "S1":
        surv = [float(sel.sf(zeta, ell)) for ell in (0, 1)]
    elif which == "S2":
        surv = [_scheme2_survival(zeta, sel, ell) for ell in (0, 1)]
    else:
        raise ValueError(f"unknown scheme {which!r}")
    den_p = sstats.beta0 * surv[0] + sstats.beta1 * surv[1]
    den_i = constraints.b0 * surv[1]
    cands = [ceiling * plan.D_d]
    if den_p > 0:
        cands.append(p_left / den_p)
    if den_i > 0:
        cands.append(i_left / den_i)
    return min(cands) / plan.D_d


def outage_probability(zeta, sel: SelectionStats, sstats: SensingStats
                       ) -> float:
    """Probability that the selected gain falls below the cutoff ``zeta``."""
    zeta = np.asarray(zeta, dtype=float)
    if np.any(zeta < 0):
        raise ValueError("zeta must be nonnegative")
    out = sstats.omega0 * sel.cdf(zeta, 0) + sstats.omega1 * sel.cdf(zeta, 1)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)
