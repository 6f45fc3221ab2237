"""Frame-level Monte Carlo simulation of sensing, beam detection, training
and data transmission.

Every frame draws the PU state, its direction and all channels, then runs
the same decision rules the analytic model describes: the largest-eigenvalue
test on the sensing samples, the energy argmax for the PU beam, LMMSE
training with the analytic coefficient, and strongest-beam selection. The
empirical averages serve as an independent check of the closed forms.

Frames are processed in fixed-size chunks, each with its own generator
spawned from the master seed, so results do not depend on the thread count.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import math

import numpy as np

from .antenna import base_pattern, sector_of
from .beam_detect import delta_bar_matrix
from .rate_model import (LN2, atpc_lhs, aic_lhs, expected_power,
                         interference_coeffs, rate_lower_bound)
from .training import lmmse_coefficient, selection_statistics

__all__ = ["FrameTrace", "Estimate", "McSummary", "Check", "ZeroPolicy",
           "simulate", "analytic_reference", "plugin_reference",
           "compare", "CHUNK_FRAMES"]

CHUNK_FRAMES = 4096


class ZeroPolicy:
    """Never transmits data."""

    def power(self, nu):
        return np.zeros_like(np.asarray(nu, dtype=float))


@dataclass
class FrameTrace:
    """One simulated frame. Beam indices are 0-based; -1 means not run."""

    pu_active: bool
    phi_pu: float
    h: complex
    chi: np.ndarray
    sensed_busy: bool
    test_stat: float
    detected_beam: int
    chi_hat: np.ndarray
    selected_beam: int
    nu_star: float
    power: float
    interference: float
    rate: float

    def row(self):
        chi = ";".join(f"{c.real:.6e}{c.imag:+.6e}j" for c in self.chi)
        chi_hat = ";".join(f"{c.real:.6e}{c.imag:+.6e}j"
                           for c in self.chi_hat)
        return [int(self.pu_active), f"{self.phi_pu:.9f}",
                f"{self.h.real:.6e}{self.h.imag:+.6e}j", chi,
                int(self.sensed_busy), f"{self.test_stat:.9e}",
                self.detected_beam, chi_hat, self.selected_beam,
                f"{self.nu_star:.9e}", f"{self.power:.9e}",
                f"{self.interference:.9e}", f"{self.rate:.9e}"]


TRACE_HEADER = ["pu_active", "phi_pu[rad]", "h", "chi", "sensed_busy",
                "test_stat", "detected_beam", "chi_hat", "selected_beam",
                "nu_star", "power[W]", "interference[W]", "rate[bit/s/Hz]"]


@dataclass(frozen=True)
class Estimate:
    """Empirical mean with its standard error and sample count."""

    value: float
    se: float
    n: int


def _mean_est(s1, s2, n):
    if n == 0:
        return Estimate(float("nan"), float("nan"), 0)
    m = s1 / n
    var = max(s2 / n - m * m, 0.0)
    se = math.sqrt(var / (n - 1)) if n > 1 else float("nan")
    return Estimate(m, se, int(n))


def _prop_est(k, n):
    if n == 0:
        return Estimate(float("nan"), float("nan"), 0)
    p = k / n
    return Estimate(p, math.sqrt(max(p * (1 - p), 0.0) / n), int(n))


@dataclass
class McSummary:
    """Empirical counterparts of the analytic quantities.

    Conditional quantities carry the count of frames they were estimated
    from. ``aic_lhs`` uses the true PU direction and per-beam training
    dwell ``T_tr/M``; ``aic_lhs_sector`` replaces the direction by its
    sector center and charges the full ``T_tr`` per beam, which is the
    convention of the interference coefficients.
    """

    n_frames: int
    seed: int
    N_se: float
    N_tr: float
    Pfa_bar: Estimate
    Pd_bar: Estimate
    beta0: Estimate
    beta1: Estimate
    delta_bar: np.ndarray
    delta_bar_se: np.ndarray
    n_busy: int
    Psi: np.ndarray               # (2, M)
    Psi_se: np.ndarray
    alpha_hat: np.ndarray         # (2, M)
    alpha_hat_se: np.ndarray
    n_idle_by_state: tuple
    mean_nu_star: Estimate
    atpc_lhs: Estimate
    aic_lhs: Estimate
    aic_lhs_sector: Estimate
    rate: Estimate
    extra: dict = field(default_factory=dict)


class _Acc:
    """Per-chunk partial sums, reduced with ``math.fsum``."""

    KEYS = ("n", "n_h0", "n_h1", "fa", "det", "b0", "b1", "busy",
            "idle0", "idle1", "nu", "nu2", "pw", "pw2", "ai", "ai2",
            "ais", "ais2", "rt", "rt2")

    def __init__(self, M):
        self.s = {k: 0.0 for k in self.KEYS}
        self.delta = np.zeros((M, M))
        self.psi = np.zeros((2, M))
        self.ah = np.zeros((2, M))
        self.ah2 = np.zeros((2, M))

    @classmethod
    def reduce(cls, parts, M):
        out = cls(M)
        for k in cls.KEYS:
            out.s[k] = math.fsum(p.s[k] for p in parts)
        for name in ("delta", "psi", "ah", "ah2"):
            stack = np.stack([getattr(p, name) for p in parts])
            red = np.apply_along_axis(math.fsum, 0, stack)
            setattr(out, name, red)
        return out


def _cn(rng, shape, var=1.0):
    """Circular complex Gaussian with the given variance."""
    z = rng.standard_normal(shape + (2,))
    return np.sqrt(var / 2.0) * (z[..., 0] + 1j * z[..., 1])


class _Model:
    """Everything a chunk needs, resolved once from the scenario."""

    def __init__(self, scenario, policy, N_se, N_tr):
        cfg = scenario.cfg.raw
        self.ant = scenario.antenna
        self.M = scenario.M
        self.N_se = int(round(N_se))
        self.N_tr = int(round(N_tr))
        ch, se = cfg["channel"], cfg["sensing"]
        self.pi1 = se["pi1"]
        self.P_p = ch["P_p_W"]
        self.sigma_w2 = ch["sigma_w2"]
        self.sigma_q2 = ch["sigma_q2"]
        self.gamma = scenario.gamma
        self.gamma_sp = ch["gamma_sp"]
        self.P_tr = scenario.cfg.P_tr
        self.sstats = scenario.sensing(self.N_se)
        self.eta = self.sstats.eta
        self.estats, self.sel = scenario.estimator(self.N_se, self.N_tr)
        self.alpha = np.asarray(scenario.alpha, dtype=float)
        self.coeff = lmmse_coefficient(
            scenario.training_config(self.N_tr), self.sstats.omega1)
        self.plan = scenario.plan(self.N_se, self.N_tr)
        self.policy = policy if policy is not None else ZeroPolicy()
        self.tilde = np.stack([self.estats.tilde(0), self.estats.tilde(1)])
        self.floor = np.array([self.estats.noise_floor(0),
                               self.estats.noise_floor(1)])


def _run_chunk(model: _Model, n, seed_seq, trace_cap):
    rng = np.random.default_rng(seed_seq)
    M, Nse, Ntr, ant = model.M, model.N_se, model.N_tr, model.ant
    acc = _Acc(M)
    active = rng.random(n) < model.pi1
    phi = ant.phi1 + ant.span * rng.random(n)
    gains = base_pattern(phi[:, None] - ant.kappa_array, ant)   # (n, M)
    sector = np.clip(sector_of(phi, ant), 0, M - 1)

    # sensing: block-faded spike psi = h sqrt(p_m(phi)), z_j = psi s_j + w_j
    h = _cn(rng, (n,), model.gamma)
    psi = h[:, None] * np.sqrt(gains) * active[:, None]
    s = _cn(rng, (n, Nse), model.P_p)
    Z = psi[:, :, None] * s[:, None, :] + _cn(rng, (n, M, Nse),
                                                model.sigma_w2)
    R = Z @ np.conj(np.swapaxes(Z, 1, 2)) / Nse
    lam = np.linalg.eigvalsh(R)[:, -1]
    stat = lam / model.sigma_w2
    busy = stat > model.eta
    idle = ~busy

    # beam detection on per-sample faded energies, only when sensed busy
    detected = np.full(n, -1)
    ib = np.flatnonzero(busy)
    if ib.size:
        # y_m(n) = psi_m(n) s(n) + w_m(n), psi_m(n) ~ CN(0, gamma p_m)
        var_psi = model.gamma * gains[ib] * active[ib, None]
        y = (_cn(rng, (ib.size, M, Nse)) * np.sqrt(var_psi)[:, :, None]
             * _cn(rng, (ib.size, M, Nse), model.P_p)
             + _cn(rng, (ib.size, M, Nse), model.sigma_w2))
        energy = np.mean(np.abs(y) ** 2, axis=-1)
        detected[ib] = np.argmax(energy, axis=1)
        np.add.at(acc.delta, (detected[ib], sector[ib]), 1.0)

    # training: independent per-beam gains, N_tr pilots per beam
    ii = np.flatnonzero(idle)
    chi = np.zeros((n, M), complex)
    chi_hat = np.zeros((n, M), complex)
    chi[ii] = _cn(rng, (ii.size, M)) * np.sqrt(model.alpha)
    if ii.size:
        on = active[ii, None]
        for m in range(M):
            # r(n) = chi sqrt(P_tr) + h_sp(n) s(n) + q(n), summed over pilots
            pu = (_cn(rng, (ii.size, Ntr), model.gamma_sp)
                  * _cn(rng, (ii.size, Ntr), model.P_p) * on)
            q = _cn(rng, (ii.size, Ntr), model.sigma_q2)
            rsum = (Ntr * math.sqrt(model.P_tr) * chi[ii, m]
                    + pu.sum(-1) + q.sum(-1))
            chi_hat[ii, m] = model.coeff[m] * rsum
    nu = np.abs(chi_hat) ** 2
    sel_beam = np.where(idle, np.argmax(nu, axis=1), -1)
    nu_star = np.where(idle, nu.max(axis=1), 0.0)
    P = np.where(idle, np.asarray(model.policy.power(nu_star), float), 0.0)

    ell = active.astype(int)
    plan = model.plan
    rate = np.zeros(n)
    if ii.size:
        tl = model.tilde[ell[ii], sel_beam[ii]]
        fl = model.floor[ell[ii]]
        rate[ii] = plan.D_d * np.log1p(
            nu_star[ii] * P[ii] / (tl * P[ii] + fl)) / LN2
    power = idle * (plan.D_d * P + plan.D_tr * model.P_tr)

    # interference at the PU under missed detection
    missed = active & idle
    kap = ant.kappa_array
    sel_safe = np.maximum(sel_beam, 0)
    g_data = base_pattern(kap[sel_safe] - phi, ant)
    g_train = gains.sum(axis=1)
    interf = missed * model.gamma * (
        plan.D_d * g_data * P + plan.D_tr / M * model.P_tr * g_train)
    G = ant.gain_matrix()
    interf_sec = missed * model.gamma * (
        plan.D_d * G[sel_safe, sector] * P
        + plan.D_tr * model.P_tr * G[:, sector].sum(axis=0))

    a = acc.s
    a["n"] = n
    a["n_h0"] = float(np.sum(~active))
    a["n_h1"] = float(np.sum(active))
    a["fa"] = float(np.sum(busy & ~active))
    a["det"] = float(np.sum(busy & active))
    a["b0"] = float(np.sum(idle & ~active))
    a["b1"] = float(np.sum(missed))
    a["busy"] = float(ib.size)
    for e in (0, 1):
        m = idle & (ell == e)
        a[f"idle{e}"] = float(m.sum())
        np.add.at(acc.psi[e], sel_beam[m], 1.0)
        acc.ah[e] = nu[m].sum(axis=0)
        acc.ah2[e] = (nu[m] ** 2).sum(axis=0)
    ns = nu_star[idle]
    a["nu"], a["nu2"] = float(ns.sum()), float((ns ** 2).sum())
    a["pw"], a["pw2"] = float(power.sum()), float((power ** 2).sum())
    a["ai"], a["ai2"] = float(interf.sum()), float((interf ** 2).sum())
    a["ais"], a["ais2"] = (float(interf_sec.sum()),
                           float((interf_sec ** 2).sum()))
    a["rt"], a["rt2"] = float(rate.sum()), float((rate ** 2).sum())

    traces = []
    for k in range(min(trace_cap, n)):
        traces.append(FrameTrace(
            pu_active=bool(active[k]), phi_pu=float(phi[k]),
            h=complex(h[k]), chi=chi[k].copy(), sensed_busy=bool(busy[k]),
            test_stat=float(stat[k]), detected_beam=int(detected[k]),
            chi_hat=chi_hat[k].copy(), selected_beam=int(sel_beam[k]),
            nu_star=float(nu_star[k]), power=float(power[k]),
            interference=float(interf[k]), rate=float(rate[k])))
    return acc, traces


def simulate(scenario, policy=None, n_frames=100_000, seed=12345,
             N_se=None, N_tr=None, threads=1, trace_limit=0,
             trace_path=None) -> McSummary:
    """Simulate ``n_frames`` frames and summarize.

    Parameters
    ----------
    scenario : Scenario
        Model chain; its calibrated threshold and LMMSE coefficient are
        used as the receiver's decision rules.
    policy : object with ``power(nu)``, optional
        Data power as a function of the selected estimated gain. ``None``
        never transmits data.
    n_frames, seed : int
    N_se, N_tr : int, optional
        Frame split; defaults to the config values.
    threads : int
        Worker threads; results are identical for any value.
    trace_limit : int
        Number of leading frames to record as ``FrameTrace``; written to
        ``trace_path`` as CSV when given.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be at least 1")
    cfg = scenario.cfg
    N_se = cfg.N_se if N_se is None else N_se
    N_tr = cfg.N_tr if N_tr is None else N_tr
    model = _Model(scenario, policy, N_se, N_tr)
    M = model.M
    sizes = [CHUNK_FRAMES] * (n_frames // CHUNK_FRAMES)
    if n_frames % CHUNK_FRAMES:
        sizes.append(n_frames % CHUNK_FRAMES)
    seqs = np.random.SeedSequence(int(seed)).spawn(len(sizes))
    caps = []
    left = int(trace_limit)
    for sz in sizes:
        caps.append(min(left, sz))
        left -= caps[-1]
    jobs = list(zip(sizes, seqs, caps))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda j: _run_chunk(model, *j), jobs))
    else:
        results = [_run_chunk(model, *j) for j in jobs]
    acc = _Acc.reduce([r[0] for r in results], M)
    traces = [t for r in results for t in r[1]]
    if trace_path is not None:
        _write_trace(trace_path, traces)
    return _summarize(acc, model, int(seed), traces)


def _write_trace(path, traces, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t in traces:
            w.writerow(t.row())


def _summarize(acc, model, seed, traces):
    a, M = acc.s, model.M
    n = int(a["n"])
    nb = int(a["busy"])
    idle = int(a["idle0"] + a["idle1"])
    psi = np.zeros((2, M))
    psi_se = np.zeros((2, M))
    ah = np.zeros((2, M))
    ah_se = np.zeros((2, M))
    for e in (0, 1):
        ne = int(a[f"idle{e}"])
        for m in range(M):
            est = _prop_est(acc.psi[e, m], ne)
            psi[e, m], psi_se[e, m] = est.value, est.se
            est = _mean_est(acc.ah[e, m], acc.ah2[e, m], ne)
            ah[e, m], ah_se[e, m] = est.value, est.se
    if nb:
        dbar = acc.delta / nb
        dbar_se = np.sqrt(dbar * (1 - dbar) / nb)
    else:
        dbar = np.full((M, M), np.nan)
        dbar_se = np.full((M, M), np.nan)
    return McSummary(
        n_frames=n, seed=seed, N_se=model.N_se, N_tr=model.N_tr,
        Pfa_bar=_prop_est(a["fa"], int(a["n_h0"])),
        Pd_bar=_prop_est(a["det"], int(a["n_h1"])),
        beta0=_prop_est(a["b0"], n), beta1=_prop_est(a["b1"], n),
        delta_bar=dbar, delta_bar_se=dbar_se, n_busy=nb,
        Psi=psi, Psi_se=psi_se, alpha_hat=ah, alpha_hat_se=ah_se,
        n_idle_by_state=(int(a["idle0"]), int(a["idle1"])),
        mean_nu_star=_mean_est(a["nu"], a["nu2"], idle),
        atpc_lhs=_mean_est(a["pw"], a["pw2"], n),
        aic_lhs=_mean_est(a["ai"], a["ai2"], n),
        aic_lhs_sector=_mean_est(a["ais"], a["ais2"], n),
        rate=_mean_est(a["rt"], a["rt2"], n),
        extra={"traces": traces})


# --- comparison against the analytic chain --------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    analytic: float
    empirical: float
    se: float
    n: int
    tol_sigma: float = 3.0
    upper_only: bool = False    # only an excess over ``analytic`` fails

    @property
    def z(self) -> float:
        diff = self.empirical - self.analytic
        if self.se > 0:
            return diff / self.se
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)

    @property
    def passed(self) -> bool:
        if self.upper_only:
            return bool(self.z <= self.tol_sigma)
        return bool(abs(self.z) <= self.tol_sigma)


def analytic_reference(scenario, policy=None, N_se=None, N_tr=None,
                       constraints=None):
    """Analytic values matching the fields of ``McSummary``."""
    cfg = scenario.cfg
    N_se = int(round(cfg.N_se if N_se is None else N_se))
    N_tr = int(round(cfg.N_tr if N_tr is None else N_tr))
    s = scenario.sensing(N_se)
    e, sel = scenario.estimator(N_se, N_tr)
    plan = scenario.plan(N_se, N_tr)
    policy = policy if policy is not None else ZeroPolicy()
    if constraints is None:
        constraints = scenario.problem(N_se, N_tr).constraints
    return {
        "Pfa_bar": s.Pfa_bar, "Pd_bar": s.Pd_bar,
        "beta0": s.beta0, "beta1": s.beta1,
        "delta_bar": scenario.delta_bar(N_se).delta_bar,
        "Psi": np.stack([sel.Psi0, sel.Psi1]),
        "alpha_hat": np.stack([e.alpha_hat0, e.alpha_hat1]),
        "mean_nu_star": sel.mean_nu_star,
        "atpc_lhs": atpc_lhs(policy, plan, sel, s, cfg.P_tr),
        "aic_lhs": aic_lhs(policy, plan, constraints, sel, s, cfg.P_tr),
        "rate": rate_lower_bound(policy, plan, e, sel, s),
        "expected_power": expected_power(policy, sel),
        "P_av_bar": constraints.P_av_bar, "I_av_bar": constraints.I_av_bar,
    }


def plugin_reference(scenario, summary: McSummary, policy=None,
                     constraints=None):
    """Analytic values recomputed with the empirical sensing outcome
    probabilities ``beta0, beta1`` substituted for the calibrated ones.

    Separates errors of the sensing approximation from errors in the
    downstream formulas (beam detection, selection, budgets, rate).
    """
    N_se, N_tr = summary.N_se, summary.N_tr
    s0 = scenario.sensing(N_se)
    b0, b1 = summary.beta0.value, summary.beta1.value
    pihat0 = b0 + b1
    s = replace(s0, beta0=b0, beta1=b1, pihat0=pihat0, pihat1=1 - pihat0,
                omega0=b0 / pihat0, omega1=b1 / pihat0,
                sigma0=(s0.pi0 - b0) / (1 - pihat0),
                sigma1=1 - (s0.pi0 - b0) / (1 - pihat0),
                Pfa_bar=summary.Pfa_bar.value, Pd_bar=summary.Pd_bar.value)
    e, _ = scenario.estimator(N_se, N_tr)
    sel = selection_statistics(e, s)
    plan = scenario.plan(N_se, N_tr)
    cfg = scenario.cfg
    policy = policy if policy is not None else ZeroPolicy()
    dbar = delta_bar_matrix(s, scenario.sensing_config(N_se),
                            scenario.antenna)
    if constraints is None:
        constraints = scenario.problem(N_se, N_tr).constraints
    bud = cfg.raw["budgets"]
    b0c, u0c = interference_coeffs(dbar, sel, s, scenario.antenna,
                                   scenario.gamma,
                                   mode=bud["conditioning_mode"],
                                   detected_beam=bud["detected_beam"])
    cons = replace(constraints, b0=b0c, u0=u0c)
    return {
        "Pfa_bar": s0.Pfa_bar, "Pd_bar": s0.Pd_bar,
        "beta0": b0, "beta1": b1,
        "delta_bar": dbar.delta_bar,
        "Psi": np.stack([sel.Psi0, sel.Psi1]),
        "alpha_hat": np.stack([e.alpha_hat0, e.alpha_hat1]),
        "mean_nu_star": sel.mean_nu_star,
        "atpc_lhs": atpc_lhs(policy, plan, sel, s, cfg.P_tr),
        "aic_lhs": aic_lhs(policy, plan, cons, sel, s, cfg.P_tr),
        "rate": rate_lower_bound(policy, plan, e, sel, s),
        "expected_power": expected_power(policy, sel),
        "P_av_bar": cons.P_av_bar, "I_av_bar": cons.I_av_bar,
    }


def compare(summary: McSummary, ref: dict, tol_sigma=3.0,
            min_mass=1e-3):
    """One ``Check`` per scalar quantity and per matrix entry."""
    out = []

    def add(name, an, est):
        out.append(Check(name, float(an), est.value, est.se, est.n,
                         tol_sigma))

    def add_prop(name, an, value, n):
        # binomial standard error under the analytic probability, so that
        # rare outcomes with zero empirical count still get a finite z
        an = float(an)
        se = math.sqrt(max(an * (1 - an), 0.0) / n) if n else math.nan
        out.append(Check(name, an, float(value), se, int(n), tol_sigma))

    for k in ("Pfa_bar", "Pd_bar", "beta0", "beta1"):
        est = getattr(summary, k)
        add_prop(k, ref[k], est.value, est.n)
    for k in ("mean_nu_star", "atpc_lhs", "rate"):
        add(k, ref[k], getattr(summary, k))
    add("aic_lhs", ref["aic_lhs"], summary.aic_lhs)
    add("aic_lhs_sector", ref["aic_lhs"], summary.aic_lhs_sector)
    D = ref["delta_bar"]
    for i, m in zip(*np.nonzero(D > min_mass)):
        add_prop(f"delta_bar[{i},{m}]", D[i, m], summary.delta_bar[i, m],
                 summary.n_busy)
    for e in (0, 1):
        ne = summary.n_idle_by_state[e]
        for m in range(ref["Psi"].shape[1]):
            add_prop(f"Psi{e}[{m}]", ref["Psi"][e, m], summary.Psi[e, m],
                     ne)
            add(f"alpha_hat{e}[{m}]", ref["alpha_hat"][e, m],
                Estimate(summary.alpha_hat[e, m],
                         summary.alpha_hat_se[e, m], ne))
    for name, budget, est in (("atpc_budget", ref["P_av_bar"],
                               summary.atpc_lhs),
                              ("aic_budget", ref["I_av_bar"],
                               summary.aic_lhs)):
        out.append(Check(name, float(budget), est.value, est.se, est.n,
                         tol_sigma, upper_only=True))
    return out
