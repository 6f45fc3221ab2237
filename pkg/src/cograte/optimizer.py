"""Power-policy and frame-duration optimization.

The inner problem fixes the frame split and finds the gain-dependent power
that maximizes the rate bound under the average power and interference
budgets via its Lagrangian dual. The outer problem cycles over the sensing
duration, training duration and power block.
"""

from dataclasses import dataclass, field, replace
import math
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .rate_model import (Constraints, FramePlan, GainGrid, GriddedPolicy,
                         InfeasibleBudgetError, Scheme1Policy, Scheme2Policy,
                         aic_lhs, atpc_lhs, gain_grid, rate_lower_bound,
                         scheme_power_levels)
from .specfun import NumericalError
from .training import EstimatorStats, SelectionStats

__all__ = ["DualState", "DualNonConvergence", "OptimizationResult",
           "ApproxPowerTerms", "PowerProblem", "kkt_power_at", "kkt_policy",
           "kkt_cutoff", "solve_dual", "golden_section", "bcd_optimize",
           "tune_scheme", "optimize_power", "approx_power_m1", "P_MAX"]

LN2 = math.log(2.0)
P_MAX = 1e4
KKT_TOL = 1e-10


class DualNonConvergence(NumericalError):
    def __init__(self, message, state):
        super().__init__(message, None)
        self.state = state


@dataclass
class DualState:
    lam: float = 0.0
    mu: float = 0.0
    s0: float = 0.1
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("multipliers must be nonnegative")


@dataclass(frozen=True)
class PowerProblem:
    """Everything the power block needs at one frame split."""

    plan: FramePlan
    estats: EstimatorStats
    sel: SelectionStats
    sstats: object
    constraints: Constraints
    P_tr: float
    grid: GainGrid = None

    def with_grid(self, n_nodes=None):
        if self.grid is not None and n_nodes is None:
            return self
        kw = {} if n_nodes is None else {"n_nodes": n_nodes}
        return replace(self, grid=gain_grid(self.sel, **kw))


# --- stationarity ------------------------------------------------------------

def _utility(P, y, w, estats, sstats):
    """Marginal rate (nats) per watt at power ``P``; ``w`` is a pair of
    ``(..., M)`` weight arrays. Strictly decreasing in ``P``."""
    out = 0.0
    for ell, beta in ((0, sstats.beta0), (1, sstats.beta1)):
        c = estats.noise_floor(ell)
        s = estats.tilde(ell) * P[..., None] + c
        out = out + beta * (y[..., None] * c * w[ell]
                            / (s * (s + y[..., None] * P[..., None]))).sum(-1)
    return out


def _price(lam, mu, w, sstats, b0):
    f0, f1 = w[0].sum(-1), w[1].sum(-1)
    return lam * (sstats.beta0 * f0 + sstats.beta1 * f1) + mu * b0 * f1


def _kkt_solve(y, w, lam, mu, estats, sstats, b0, p_max=P_MAX,
               tol=KKT_TOL):
    """Vectorized per-node root of utility(P) = LN2 * price."""
    y = np.asarray(y, dtype=float)
    price = LN2 * _price(lam, mu, w, sstats, b0)
    u0 = _utility(np.zeros_like(y), y, w, estats, sstats)
    active = u0 > price
    P = np.zeros_like(y)
    if not np.any(active):
        return P
    ya = y[active]
    wa = (w[0][active], w[1][active])
    pr = price[active]
    mass = sstats.beta0 * wa[0].sum(-1) + sstats.beta1 * wa[1].sum(-1)
    with np.errstate(divide="ignore"):
        hi = np.where(pr > 0, mass / np.where(pr > 0, pr, 1.0), np.inf)
    hi = np.minimum(hi, p_max)
    capped = _utility(hi, ya, wa, estats, sstats) > pr
    lo = np.zeros_like(ya)
    for _ in range(200):
        if np.max(hi - lo) <= tol:
            break
        mid = 0.5 * (lo + hi)
        up = _utility(mid, ya, wa, estats, sstats) > pr
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    else:
        raise NumericalError("KKT bisection did not reach tolerance",
                             float(np.max(hi - lo)))
    P[active] = np.where(capped, hi, 0.5 * (lo + hi))
    return P


def kkt_power_at(nu, dual: DualState, plan: FramePlan, estats: EstimatorStats,
                 sel: SelectionStats, sstats, constraints: Constraints,
                 p_max: float = P_MAX) -> float:
    """Optimal power at a single gain value for given multipliers."""
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    y = np.array([float(nu)])
    logw = [sel.log_beam_weights(y, ell) for ell in (0, 1)]
    ref = max(np.max(l) for l in logw)
    if not np.isfinite(ref):
        return 0.0
    w = tuple(np.exp(l - ref) for l in logw)
    return float(_kkt_solve(y, w, dual.lam, dual.mu, estats, sstats,
                            constraints.b0, p_max)[0])


def _normalized_grid_weights(grid):
    ref = np.maximum(grid.log_beam_w[0].max(-1), grid.log_beam_w[1].max(-1))
    ref = np.where(np.isfinite(ref), ref, 0.0)[:, None]
    return tuple(np.exp(l - ref) for l in grid.log_beam_w)


def kkt_policy(dual: DualState, prob: PowerProblem, p_max: float = P_MAX
               ) -> GriddedPolicy:
    prob = prob.with_grid()
    w = _normalized_grid_weights(prob.grid)
    P = _kkt_solve(prob.grid.nodes, w, dual.lam, dual.mu, prob.estats,
                   prob.sstats, prob.constraints.b0, p_max)
    return GriddedPolicy(prob.grid.nodes, P)


def kkt_cutoff(dual: DualState, prob: PowerProblem) -> float:
    """Smallest gain that receives positive power under ``dual``.

    The grid brackets the switch-on point; a root solve on the marginal
    utility at zero power minus the price places it exactly.
    """
    prob = prob.with_grid()
    sel, s, b0 = prob.sel, prob.sstats, prob.constraints.b0

    def gap(nu):
        y = np.array([nu])
        logw = [sel.log_beam_weights(y, ell) for ell in (0, 1)]
        ref = max(np.max(l) for l in logw)
        if not np.isfinite(ref):
            return -1.0
        w = tuple(np.exp(l - ref) for l in logw)
        u = _utility(np.zeros(1), y, w, prob.estats, s)
        return float(u[0] - LN2 * _price(dual.lam, dual.mu, w, s, b0)[0])

    P = kkt_policy(dual, prob).P
    nodes = prob.grid.nodes
    on = np.nonzero(P > 0)[0]
    if on.size == 0:
        return math.inf
    k = int(on[0])
    if k == 0:
        lo = 0.0
        if gap(nodes[0] * 1e-6) > 0:
            return 0.0
        lo = nodes[0] * 1e-6
    else:
        lo = float(nodes[k - 1])
    return float(brentq(gap, lo, float(nodes[k]), xtol=1e-14, rtol=1e-12))


# --- dual problem -------------------------------------------------------------

class _DualEvaluator:
    def __init__(self, prob: PowerProblem, p_max):
        self.prob = prob.with_grid()
        self.p_max = p_max
        self.w = _normalized_grid_weights(self.prob.grid)
        self.cache = {}

    def policy(self, lam, mu):
        key = (lam, mu)
        if key not in self.cache:
            pr = self.prob
            P = _kkt_solve(pr.grid.nodes, self.w, lam, mu, pr.estats,
                           pr.sstats, pr.constraints.b0, self.p_max)
            pol = GriddedPolicy(pr.grid.nodes, P)
            a = atpc_lhs(pol, pr.plan, pr.sel, pr.sstats, pr.P_tr, pr.grid)
            i = aic_lhs(pol, pr.plan, pr.constraints, pr.sel, pr.sstats,
                        pr.P_tr, pr.grid)
            self.cache[key] = (pol, a, i)
        return self.cache[key]

    def excess(self, lam, mu):
        _, a, i = self.policy(lam, mu)
        c = self.prob.constraints
        return (a - c.P_av_bar) / c.P_av_bar, (i - c.I_av_bar) / c.I_av_bar


def _root(fun, tol):
    """Smallest x >= 0 with fun(x) <= 0 for decreasing fun (fun(0) > 0)."""
    hi = 1.0
    while fun(hi) > 0:
        hi *= 4.0
        if hi > 1e30:
            raise NumericalError("multiplier bracket failed", hi)
    lo = 0.0 if hi == 1.0 else hi / 4.0
    if fun(lo) <= 0:
        return lo
    return brentq(fun, lo, hi, xtol=1e-14, rtol=tol, maxiter=200)


def _check_training_budgets(prob):
    c, pl, s = prob.constraints, prob.plan, prob.sstats
    if s.pihat0 * pl.D_tr * prob.P_tr >= c.P_av_bar:
        raise InfeasibleBudgetError(
            "training power alone exceeds the average power budget", "ATPC")
    if c.u0 * pl.D_tr * prob.P_tr >= c.I_av_bar:
        raise InfeasibleBudgetError(
            "training interference alone exceeds the interference budget",
            "AIC")


def solve_dual(prob: PowerProblem, method: str = "bisection",
               tol: float = 1e-5, p_max: float = P_MAX,
               max_iter: int = 5000, s0: float = 0.1):
    """Find multipliers and the gridded policy.

    ``method="bisection"`` exploits monotonicity of both constraint maps in
    each multiplier: it tests the four active sets in turn and solves the
    active constraints to relative accuracy well below ``tol``.
    ``method="subgradient"`` runs projected subgradient steps
    ``s0/sqrt(t)`` on budget-normalized violations.
    """
    _check_training_budgets(prob)
    ev = _DualEvaluator(prob, p_max)
    if method == "subgradient":
        return _subgradient(ev, tol, max_iter, s0)
    if method != "bisection":
        raise ValueError(f"unknown method {method!r}")
    inner = tol * 1e-3

    def done(lam, mu, iters):
        pol, _, _ = ev.policy(lam, mu)
        return DualState(lam=lam, mu=mu, iterations=iters), pol

    ep, ei = ev.excess(0.0, 0.0)
    if ep <= 0 and ei <= 0:
        return done(0.0, 0.0, len(ev.cache))
    if ep > 0:
        lam = _root(lambda l: ev.excess(l, 0.0)[0], inner)
        if ev.excess(lam, 0.0)[1] <= tol:
            return done(lam, 0.0, len(ev.cache))
    mu_only = _root(lambda m: ev.excess(0.0, m)[1], inner)
    if ev.excess(0.0, mu_only)[0] <= tol:
        return done(0.0, mu_only, len(ev.cache))

    def lam_of(mu):
        if ev.excess(0.0, mu)[0] <= 0:
            return 0.0
        return _root(lambda l: ev.excess(l, mu)[0], inner)

    # both active: along the ATPC-tight curve the AIC excess decreases in mu
    mu = _root(lambda m: ev.excess(lam_of(m), m)[1], inner)
    return done(lam_of(mu), mu, len(ev.cache))


def _subgradient(ev, tol, max_iter, s0):
    st = DualState(s0=s0)
    drift = []
    lam_scale = mu_scale = None
    for t in range(1, max_iter + 1):
        ep, ei = ev.excess(st.lam, st.mu)
        if lam_scale is None:
            # scale steps to the marginal rate per watt at a unit policy
            lam_scale = mu_scale = max(1e-3, _multiplier_scale(ev))
        step = s0 / math.sqrt(t)
        # clipped violations keep the first steps from overshooting
        lam = max(0.0, st.lam + step * lam_scale * min(max(ep, -1.0), 1.0))
        mu = max(0.0, st.mu + step * mu_scale * min(max(ei, -1.0), 1.0))
        drift.append(max(abs(lam - st.lam), abs(mu - st.mu)))
        st.lam, st.mu, st.iterations = lam, mu, t
        st.history.append((lam, mu, ep, ei))
        viol_ok = max(ep, ei) < tol
        cs_ok = (lam * abs(ep) < tol * max(lam, 1.0)
                 and mu * abs(ei) < tol * max(mu, 1.0))
        still = max(drift[-10:]) < tol * max(lam, mu, 1e-3)
        if t > 10 and viol_ok and cs_ok and still:
            pol, _, _ = ev.policy(st.lam, st.mu)
            return st, pol
    raise DualNonConvergence(
        f"subgradient did not converge in {max_iter} iterations", st)


def _multiplier_scale(ev):
    pr = ev.prob
    y = pr.grid.nodes
    u = _utility(np.ones_like(y), y, ev.w, pr.estats, pr.sstats)
    p = _price(1.0, 0.0, ev.w, pr.sstats, pr.constraints.b0)
    sel = p > 0
    return float(np.median(u[sel] / p[sel]) / LN2) if np.any(sel) else 1.0


# --- duration search ------------------------------------------------------------

def golden_section(f: Callable[[float], float], lo: float, hi: float,
                   tol: float, prescan: int = 16, log_scale: bool = False):
    """Maximize ``f`` on ``[lo, hi]``.

    A ``prescan``-point coarse scan picks the best bracket, then
    golden-section refines inside it. Returns ``(x, f(x), evaluations)``.
    """
    to = (lambda x: math.log(x)) if log_scale else (lambda x: x)
    back = (lambda u: math.exp(u)) if log_scale else (lambda u: u)
    a, b = to(lo), to(hi)
    cache = {}

    def g(u):
        if u not in cache:
            val = f(back(u))
            cache[u] = val if np.isfinite(val) else -np.inf
        return cache[u]

    pts = np.linspace(a, b, prescan)
    vals = [g(u) for u in pts]
    k = int(np.argmax(vals))
    if not np.isfinite(vals[k]):
        return None, -np.inf, len(cache)
    a, b = pts[max(k - 1, 0)], pts[min(k + 1, prescan - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    while back(b) - back(a) > tol:
        if g(c) >= g(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    cands = [pts[k], c, d]
    best = max(cands, key=g)
    return back(best), g(best), len(cache)


@dataclass
class OptimizationResult:
    N_se: int
    N_tr: int
    rate: float
    policy: object
    lam: float = 0.0
    mu: float = 0.0
    atpc_slack: float = 0.0
    aic_slack: float = 0.0
    outer_iterations: int = 0
    converged: bool = False
    history: list = field(default_factory=list, repr=False)
    threshold: Optional[float] = None
    scheme: str = "optimal"
    cutoff_gain: Optional[float] = None

    def durations(self, M, T_s):
        return M * self.N_se * T_s, M * self.N_tr * T_s

    def cutoff(self) -> float:
        """Smallest gain with positive power."""
        if self.cutoff_gain is not None:
            return float(self.cutoff_gain)
        pol = self.policy
        if isinstance(pol, GriddedPolicy):
            nz = pol.nu_grid[pol.P > 0]
            return float(nz[0]) if nz.size else math.inf
        return float(self.threshold)


def _evaluate_optimal(prob: PowerProblem, p_max, method="bisection"):
    dual, pol = solve_dual(prob, method=method, p_max=p_max)
    rate = rate_lower_bound(pol, prob.plan, prob.estats, prob.sel,
                            prob.sstats, grid=prob.grid)
    return rate, pol, dual


def _scheme_eval(which, prob: PowerProblem, zeta_hint=None, p_max=P_MAX):
    """Best threshold for a scheme at a fixed frame split."""
    pr = prob
    m = pr.sel.mean_nu_star

    def rate_at(z):
        Pi = scheme_power_levels(z, which, pr.plan, pr.sel, pr.sstats,
                                 pr.constraints, pr.P_tr, ceiling=p_max)
        pol = Scheme1Policy(Pi, z) if which == "S1" else Scheme2Policy(Pi, z)
        return rate_lower_bound(pol, pr.plan, pr.estats, pr.sel, pr.sstats)

    z, r, _ = golden_section(rate_at, 1e-3 * m, 30.0 * m, tol=1e-4 * m,
                             prescan=24)
    Pi = scheme_power_levels(z, which, pr.plan, pr.sel, pr.sstats,
                             pr.constraints, pr.P_tr, ceiling=p_max)
    pol = Scheme1Policy(Pi, z) if which == "S1" else Scheme2Policy(Pi, z)
    return r, pol, z


def _block_search(objective, N_se, N_tr, bounds, M, T_f, T_s, tol,
                  max_cycles, history):
    """Alternate line searches over N_se and N_tr (continuous)."""
    total = T_f / (M * T_s)
    rate = objective(N_se, N_tr)
    history.append((N_se, N_tr, rate))
    converged = False
    cycles = 0
    for cycles in range(1, max_cycles + 1):
        prev = rate
        hi = min(bounds["N_se"][1], total - N_tr - 1.0)
        x, r, _ = golden_section(lambda n: objective(n, N_tr),
                                 bounds["N_se"][0], hi, tol=0.5,
                                 log_scale=True)
        if x is not None and r >= rate:
            N_se, rate = x, r
        hi = min(bounds["N_tr"][1], total - N_se - 1.0)
        x, r, _ = golden_section(lambda n: objective(N_se, n),
                                 bounds["N_tr"][0], hi, tol=0.5,
                                 log_scale=True)
        if x is not None and r >= rate:
            N_tr, rate = x, r
        history.append((N_se, N_tr, rate))
        if rate - prev <= tol * abs(rate):
            converged = True
            break
    return N_se, N_tr, rate, cycles, converged


def _integer_refine(objective, N_se, N_tr, span=2):
    best = (-np.inf, None, None)
    base_se, base_tr = int(round(N_se)), int(round(N_tr))
    for i in range(base_se - span, base_se + span + 1):
        for j in range(base_tr - span, base_tr + span + 1):
            if i < 1 or j < 1:
                continue
            r = objective(i, j)
            if r > best[0]:
                best = (r, i, j)
    return best


DEFAULT_BOUNDS = {"N_se": (5.0, 3000.0), "N_tr": (2.0, 3000.0)}


def bcd_optimize(build: Callable[[float, float], PowerProblem],
                 N_se0: float, N_tr0: float, M: int, T_f: float, T_s: float,
                 bounds=None, tol: float = 1e-6, max_cycles: int = 20,
                 p_max: float = P_MAX, dual_method: str = "bisection"
                 ) -> OptimizationResult:
    """Maximize the rate bound over sensing samples, training samples and
    the power policy. ``build(N_se, N_tr)`` returns the power problem at a
    frame split (or raises if that split is infeasible)."""
    return _optimize(build, "optimal", N_se0, N_tr0, M, T_f, T_s,
                     bounds, tol, max_cycles, p_max, dual_method)


def tune_scheme(which: str, build: Callable[[float, float], PowerProblem],
                N_se0: float, N_tr0: float, M: int, T_f: float, T_s: float,
                bounds=None, tol: float = 1e-6, max_cycles: int = 20,
                p_max: float = P_MAX) -> OptimizationResult:
    """Same search for the threshold schemes; the threshold is optimized
    at every frame split and the level follows from the budgets."""
    if which not in ("S1", "S2"):
        raise ValueError(f"unknown scheme {which!r}")
    return _optimize(build, which, N_se0, N_tr0, M, T_f, T_s, bounds, tol,
                     max_cycles, p_max)


def _optimize(build, which, N_se0, N_tr0, M, T_f, T_s, bounds, tol,
              max_cycles, p_max, dual_method="bisection"):
    bounds = dict(DEFAULT_BOUNDS, **(bounds or {}))
    cache = {}

    def solve(N_se, N_tr):
        key = (float(N_se), float(N_tr))
        if key not in cache:
            try:
                prob = build(N_se, N_tr).with_grid()
                if which == "optimal":
                    rate, pol, extra = _evaluate_optimal(prob, p_max,
                                                         dual_method)
                else:
                    rate, pol, extra = _scheme_eval(which, prob, p_max=p_max)
                cache[key] = (rate, pol, extra, prob)
            except (ValueError, NumericalError):
                cache[key] = (-np.inf, None, None, None)
        return cache[key]

    def objective(N_se, N_tr):
        return solve(N_se, N_tr)[0]

    history = []
    N_se, N_tr, rate, cycles, conv = _block_search(
        objective, N_se0, N_tr0, bounds, M, T_f, T_s, tol, max_cycles,
        history)
    if not np.isfinite(rate):
        raise InfeasibleBudgetError(
            "no feasible frame split found in the search range", "both")
    r_int, i_se, i_tr = _integer_refine(objective, N_se, N_tr)
    rate, pol, extra, prob = solve(i_se, i_tr)
    res = OptimizationResult(N_se=i_se, N_tr=i_tr, rate=rate, policy=pol,
                             outer_iterations=cycles, converged=conv,
                             history=history, scheme=which)
    if which == "optimal":
        res.lam, res.mu = extra.lam, extra.mu
        res.cutoff_gain = kkt_cutoff(extra, prob)
    else:
        res.threshold = extra
    res.atpc_slack = prob.constraints.P_av_bar - atpc_lhs(
        pol, prob.plan, prob.sel, prob.sstats, prob.P_tr, prob.grid)
    res.aic_slack = prob.constraints.I_av_bar - aic_lhs(
        pol, prob.plan, prob.constraints, prob.sel, prob.sstats, prob.P_tr,
        prob.grid)
    return res


def optimize_power(prob: PowerProblem, which: str = "optimal",
                   p_max: float = P_MAX, dual_method: str = "bisection",
                   with_cutoff: bool = False):
    """Power block only at a fixed frame split: ``(rate, policy)``, or
    ``(rate, policy, cutoff)`` with ``with_cutoff``."""
    prob = prob.with_grid()
    if which == "optimal":
        rate, pol, dual = _evaluate_optimal(prob, p_max, dual_method)
        cut = kkt_cutoff(dual, prob) if with_cutoff else None
    else:
        rate, pol, cut = _scheme_eval(which, prob, p_max=p_max)
    return (rate, pol, cut) if with_cutoff else (rate, pol)


# --- single-beam closed-form approximation ---------------------------------------

@dataclass(frozen=True)
class ApproxPowerTerms:
    W: float
    F: float
    Upsilon: float
    P: float
    clipped: bool


def approx_power_m1(nu, dual: DualState, plan: FramePlan,
                    estats: EstimatorStats, sstats, constraints: Constraints
                    ) -> ApproxPowerTerms:
    """Quadratic approximation of the single-beam stationarity condition,
    valid when the estimation-error term is small against the noise."""
    if len(estats.alpha) != 1:
        raise NotImplementedError("closed-form approximation needs M = 1")
    nu = float(nu)
    if nu <= 0:
        return ApproxPowerTerms(math.nan, -math.inf, math.nan, 0.0, True)
    a0, a1 = float(estats.alpha_hat0[0]), float(estats.alpha_hat1[0])
    W = (a1 / a0) * math.exp(-nu * (1.0 / a0 - 1.0 / a1))
    b0w, b1 = sstats.beta0 * W, sstats.beta1
    c0, c1 = estats.noise_floor(0), estats.noise_floor(1)
    K = LN2 * (dual.lam * (b0w + b1) + dual.mu * constraints.b0)
    if K == 0:
        raise ValueError("multipliers must not both be zero")
    F = (b0w + b1) / K - (c0 + c1) / nu
    Ups = F * F - (4.0 / nu) * (c0 * c1 / nu - (b0w * c1 + b1 * c0) / K)
    if Ups < 0:
        return ApproxPowerTerms(W, F, Ups, 0.0, True)
    P = max(0.0, 0.5 * (F + math.sqrt(Ups)))
    return ApproxPowerTerms(W, F, Ups, P, P == 0.0)
