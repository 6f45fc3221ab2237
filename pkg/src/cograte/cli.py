"""Command-line experiment runner.

Each subcommand reads one YAML config, writes its data files to the output
directory and prints their paths. Every file starts with the config hash
and seed; the generation time sits on a line of its own so it can be
excluded when comparing runs.
"""

import argparse
import csv
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from importlib import resources
import json
import logging
import math
import os
import sys

import jsonschema
import numpy as np

from . import __version__
from .mc_oracle import analytic_reference, compare, plugin_reference, simulate
from .optimizer import (OptimizationResult, bcd_optimize, optimize_power,
                        tune_scheme)
from .rate_model import InfeasibleBudgetError, outage_probability
from .scenario import ConfigError, Scenario, load_config
from .specfun import NumericalError

__all__ = ["main", "run", "COMMANDS", "outage_table", "outage_ordering",
           "ordering_flag"]

log = logging.getLogger("cograte")

COMMANDS = ("calibrate", "beam-matrix", "policy", "optimize", "sweep",
            "outage", "verify")
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4
STATED_OUTAGE_ORDER = ("optimal", "S2", "S1")
STATED_CUTOFF_ORDER = ("optimal", "S1", "S2")
POLICY_POINTS = 401
POLICY_SPAN = 10.0          # policy table covers [0, 10 m]


# --- output helpers --------------------------------------------------------

def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = (datetime.fromtimestamp(int(epoch), timezone.utc) if epoch
         else datetime.now(timezone.utc))
    return t.isoformat(timespec="seconds")


class _Writer:
    """Writes artifacts with the provenance header; one instance per run."""

    def __init__(self, out_dir, command, cfg, seed):
        self.out_dir = out_dir
        self.command = command
        self.hash = cfg.config_hash()
        self.seed = int(seed)
        self.paths = []

    def meta(self):
        return {"command": self.command, "config_hash": self.hash,
                "seed": self.seed, "generated": _timestamp(),
                "version": __version__}

    def _path(self, name):
        os.makedirs(self.out_dir, exist_ok=True)
        p = os.path.join(self.out_dir, name)
        self.paths.append(p)
        return p

    def csv(self, name, header, rows):
        with open(self._path(name), "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# cograte {self.command} config_hash={self.hash} "
                     f"seed={self.seed}\n")
            fh.write(f"# generated {_timestamp()}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def json(self, name, payload, schema_def):
        payload = dict(payload, meta=self.meta())
        _validate_output(payload, schema_def)
        with open(self._path(name), "w", newline="\n",
                  encoding="utf-8") as fh:
            json.dump(_jsonable(payload), fh, sort_keys=True, indent=1,
                      allow_nan=True)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    return v


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _validate_output(payload, schema_def):
    schema = json.loads(resources.files("cograte").joinpath(
        "data/output_schema.json").read_text())
    sub = {"$ref": f"#/$defs/{schema_def}", "$defs": schema["$defs"]}
    jsonschema.validate(_jsonable(payload), sub)


# --- shared pieces ---------------------------------------------------------

def _schemes(cfg):
    s = cfg.raw["scheme"]
    return ("optimal", "S1", "S2") if s == "all" else (s,)


def _power_block(sc, N_se, N_tr, which, P_av=None, I_av=None):
    """``((rate, policy, cutoff), problem)`` at one frame split."""
    opt = sc.cfg.raw["optimizer"]
    prob = sc.problem(N_se, N_tr, P_av, I_av).with_grid(opt["grid_nodes"])
    return optimize_power(prob, which, p_max=opt["p_max_W"],
                          dual_method=opt["dual_method"],
                          with_cutoff=True), prob


def _bcd(sc, which, P_av=None, I_av=None):
    cfg = sc.cfg
    opt = cfg.raw["optimizer"]
    bounds = {"N_se": tuple(opt["N_se_bounds"]),
              "N_tr": tuple(opt["N_tr_bounds"])}
    build = sc.builder(P_av, I_av)
    kw = dict(M=sc.M, T_f=cfg.T_f, T_s=cfg.T_s, bounds=bounds,
              tol=opt["bcd_tol"], max_cycles=opt["max_cycles"],
              p_max=opt["p_max_W"])
    if which == "optimal":
        return bcd_optimize(build, cfg.N_se, cfg.N_tr,
                            dual_method=opt["dual_method"], **kw)
    return tune_scheme(which, build, cfg.N_se, cfg.N_tr, **kw)


def _result_dict(res: OptimizationResult, sc):
    T_se, T_tr = res.durations(sc.M, sc.cfg.T_s)
    return {"N_se": res.N_se, "N_tr": res.N_tr, "T_se_ms": T_se * 1e3,
            "T_tr_ms": T_tr * 1e3, "rate_bps_hz": res.rate,
            "lambda": res.lam, "mu": res.mu, "atpc_slack_W": res.atpc_slack,
            "aic_slack_W": res.aic_slack, "cutoff": res.cutoff(),
            "outer_iterations": res.outer_iterations,
            "converged": res.converged,
            "mean_nu_star": sc.estimator(res.N_se, res.N_tr)[1].mean_nu_star}


def _sweep_points(sw):
    n = int(math.floor((sw["stop"] - sw["start"]) / sw["step"] + 1e-9)) + 1
    return [sw["start"] + k * sw["step"] for k in range(n)]


# --- subcommands -----------------------------------------------------------

def cmd_calibrate(sc, w, args):
    s = sc.sensing(sc.cfg.N_se)
    payload = {k: getattr(s, k) for k in (
        "N_se", "M", "eta", "theta_sen", "sigma_sen", "Pfa_bar", "Pd_bar",
        "pi0", "pi1", "beta0", "beta1", "pihat0", "pihat1", "omega0",
        "omega1", "sigma0", "sigma1")}
    payload["pd_model"] = sc.cfg.raw["sensing"]["pd_model"]
    w.json("calibrate.json", payload, "calibrate")


def cmd_beam_matrix(sc, w, args):
    D = sc.delta_bar(sc.cfg.N_se).delta_bar
    M = sc.M
    w.csv("beam_matrix.csv",
          ["detected_beam[index]"] + [f"true_sector_{m}[prob]" for m in range(M)],
          [[i] + list(D[i]) for i in range(M)])


def cmd_policy(sc, w, args):
    cfg = sc.cfg
    N_se, N_tr = cfg.N_se, cfg.N_tr
    _, sel = sc.estimator(N_se, N_tr)
    m = sel.mean_nu_star
    nu = np.linspace(0.0, POLICY_SPAN * m, POLICY_POINTS)
    cols, header = [nu, nu / m], ["nu_hat_star[gain]", "nu_over_mean[ratio]"]
    for which in _schemes(cfg):
        (rate, pol, cut), _ = _power_block(sc, N_se, N_tr, which)
        cols.append(np.asarray(pol.power(nu), float))
        header.append(f"P_{which}[W]")
        log.info("%s: rate %.6g bit/s/Hz, cutoff %.6g", which, rate,
                 cut)
    w.csv("policy.csv", header, zip(*cols))


def cmd_optimize(sc, w, args):
    results = {}
    for which in _schemes(sc.cfg):
        results[which] = _result_dict(_bcd(sc, which), sc)
    w.json("optimize.json", {"results": results,
                             "P_av_dB": sc.cfg.raw["budgets"]["P_av_dB"],
                             "I_av_dB": sc.cfg.raw["budgets"]["I_av_dB"]},
           "optimize")


def _sweep_one(sc, var, x, reopt):
    cfg = sc.cfg
    N_se, N_tr = cfg.N_se, cfg.N_tr
    P_av = I_av = None
    b = cfg.raw["budgets"]
    if var == "T_se_ms":
        N_se = x * 1e-3 / (sc.M * cfg.T_s)
    elif var == "T_tr_ms":
        N_tr = x * 1e-3 / (sc.M * cfg.T_s)
    elif var == "I_av_dB":
        I_av = 10.0 ** (x / 10.0)
    else:
        P_av = 10.0 ** (x / 10.0)
    row = {"x": x, "N_se": N_se, "N_tr": N_tr}
    for which in _schemes(cfg):
        try:
            if reopt and var in ("I_av_dB", "P_av_dB"):
                res = _bcd(sc, which, P_av, I_av)
                row[which] = res.rate
                row[f"N_se_{which}"], row[f"N_tr_{which}"] = res.N_se, res.N_tr
            else:
                (rate, _, _), _ = _power_block(sc, N_se, N_tr, which, P_av,
                                            I_av)
                row[which] = rate
        except (InfeasibleBudgetError, ValueError, NumericalError) as exc:
            log.warning("%s=%g %s infeasible: %s", var, x, which, exc)
            row[which] = math.nan
    return row


def cmd_sweep(sc, w, args):
    sw = sc.cfg.raw.get("sweep")
    if sw is None:
        raise ConfigError("sweep subcommand needs a sweep section", "$.sweep")
    xs = _sweep_points(sw)
    var, reopt = sw["variable"], bool(sw.get("reoptimize", False))
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as ex:
        rows = list(ex.map(lambda x: _sweep_one(sc, var, x, reopt), xs))
    schemes = _schemes(sc.cfg)
    unit = {"T_se_ms": "T_se[ms]", "T_tr_ms": "T_tr[ms]",
            "I_av_dB": "I_av[dB]", "P_av_dB": "P_av[dB]"}[var]
    header = [unit, "N_se[samples]", "N_tr[samples]"] + [
        f"R_{s}[bit/s/Hz]" for s in schemes]
    if reopt and var in ("I_av_dB", "P_av_dB"):
        header += [f"{k}_{s}[samples]" for s in schemes
                   for k in ("N_se", "N_tr")]
    out = []
    for r in rows:
        line = [r["x"], r["N_se"], r["N_tr"]] + [r[s] for s in schemes]
        if reopt and var in ("I_av_dB", "P_av_dB"):
            line += [r.get(f"{k}_{s}", math.nan) for s in schemes
                     for k in ("N_se", "N_tr")]
        out.append(line)
    w.csv(f"sweep_{var}.csv", header, out)


def outage_table(sc, P_av_dB_values, I_av=None):
    """Rows ``(P_av_dB, cutoff_s..., P_out_s...)`` at the config split."""
    cfg = sc.cfg
    N_se, N_tr = cfg.N_se, cfg.N_tr
    s = sc.sensing(N_se)
    _, sel = sc.estimator(N_se, N_tr)
    rows = []
    for x in P_av_dB_values:
        zs = []
        for which in ("optimal", "S1", "S2"):
            try:
                (_, _, cut), _ = _power_block(sc, N_se, N_tr, which,
                                              10.0 ** (x / 10.0), I_av)
                zs.append(cut)
            except (InfeasibleBudgetError, NumericalError):
                zs.append(math.nan)
        outs = [outage_probability(z, sel, s) if math.isfinite(z)
                else (1.0 if z == math.inf else math.nan) for z in zs]
        rows.append([x] + zs + outs)
    return rows


def cmd_outage(sc, w, args):
    sw = sc.cfg.raw.get("sweep")
    if sw is not None and sw["variable"] == "P_av_dB":
        xs = _sweep_points(sw)
    else:
        xs = list(np.arange(-4.0, 10.0 + 1e-9, 1.0))
    rows = outage_table(sc, xs)
    w.csv("outage.csv",
          ["P_av[dB]", "cutoff_optimal[gain]", "cutoff_S1[gain]",
           "cutoff_S2[gain]", "P_out_optimal[prob]", "P_out_S1[prob]",
           "P_out_S2[prob]"], rows)


def outage_ordering(sc, P_av=None, I_av=None):
    """Cutoffs and outage at one budget point, checked against the two
    published orderings: cutoffs ``zeta < zeta_S1 < zeta_S2`` and outage
    ``P_out < P_out_S2 < P_out_S1``. Outage is the selected-gain CDF at the
    cutoff, so the two cannot both hold."""
    cfg = sc.cfg
    N_se, N_tr = cfg.N_se, cfg.N_tr
    s = sc.sensing(N_se)
    _, sel = sc.estimator(N_se, N_tr)
    cut, pout = {}, {}
    for which in ("optimal", "S1", "S2"):
        (_, _, cut[which]), _ = _power_block(sc, N_se, N_tr, which, P_av,
                                             I_av)
        pout[which] = outage_probability(cut[which], sel, s)
    by_cut = tuple(sorted(cut, key=cut.get))
    by_out = tuple(sorted(pout, key=pout.get))
    return {"cutoff": cut, "P_out": pout,
            "cutoff_order": list(by_cut),
            "implied_order": list(by_out),
            "stated_cutoff_order": list(STATED_CUTOFF_ORDER),
            "stated_order": list(STATED_OUTAGE_ORDER),
            "outage_follows_cutoffs": by_cut == by_out,
            "stated_order_consistent": by_out == STATED_OUTAGE_ORDER,
            "cutoffs_increasing": by_cut == STATED_CUTOFF_ORDER}


def ordering_flag(order):
    """Text for the verify report on the two stated orderings."""
    held = [name for name, ok in (
        ("cutoff order zeta < zeta_S1 < zeta_S2",
         order["cutoffs_increasing"]),
        ("outage order P_out < P_out_S2 < P_out_S1",
         order["stated_order_consistent"])) if ok]
    computed = " < ".join(f"zeta_{k}" for k in order["cutoff_order"])
    return ("stated cutoff order zeta < zeta_S1 < zeta_S2 and stated outage "
            "order P_out < P_out_S2 < P_out_S1 are mutually inconsistent "
            "(outage is increasing in the cutoff); computed " + computed
            + "; consistent with: " + (", ".join(held) or "neither"))


def _check_dict(c):
    return {"name": c.name, "analytic": c.analytic, "empirical": c.empirical,
            "se": c.se, "n": c.n, "z": c.z, "passed": c.passed}


def cmd_verify(sc, w, args):
    cfg = sc.cfg
    N_se, N_tr = cfg.N_se, cfg.N_tr
    (rate, pol, _), prob = _power_block(sc, N_se, N_tr, "optimal")
    frames = int(cfg.raw["mc"]["frames"])
    trace_limit = int(cfg.raw["mc"]["trace_limit"])
    summ = simulate(sc, pol, frames, w.seed, N_se, N_tr,
                    threads=max(1, args.threads), trace_limit=trace_limit)
    checks = compare(summ, analytic_reference(sc, pol, N_se, N_tr,
                                              prob.constraints))
    plug = compare(summ, plugin_reference(sc, summ, pol, prob.constraints))
    order = outage_ordering(sc)
    payload = {"frames": frames, "N_se": N_se, "N_tr": N_tr,
               "checks": [_check_dict(c) for c in checks],
               "plugin_checks": [_check_dict(c) for c in plug],
               "outage_ordering": order,
               "passed": sum(c.passed for c in checks),
               "failed": sum(not c.passed for c in checks)}
    payload["flags"] = [ordering_flag(order)]
    w.json("verify.json", payload, "verify")
    lines = [f"# cograte verify config_hash={w.hash} seed={w.seed}",
             f"# generated {_timestamp()}"]
    for title, cs in (("analytic", checks), ("plug-in sensing", plug)):
        lines.append(f"[{title}]")
        for c in cs:
            lines.append(f"{'PASS' if c.passed else 'FAIL'} {c.name}: "
                         f"analytic={c.analytic:.6g} "
                         f"empirical={c.empirical:.6g} se={c.se:.3g} "
                         f"z={c.z:+.2f}")
    for f in payload.get("flags", []):
        lines.append(f"FLAG {f}")
    with open(w._path("verify.txt"), "w", newline="\n",
              encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if trace_limit:
        from .mc_oracle import TRACE_HEADER
        traces = summ.extra["traces"]
        w.csv("trace.csv", TRACE_HEADER, [t.row() for t in traces])


HANDLERS = {"calibrate": cmd_calibrate, "beam-matrix": cmd_beam_matrix,
            "policy": cmd_policy, "optimize": cmd_optimize,
            "sweep": cmd_sweep, "outage": cmd_outage, "verify": cmd_verify}


# --- entry points ----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="cograte",
        description="Rate analysis and optimization for a cognitive radio "
                    "link with a multi-beam reconfigurable antenna.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML experiment file "
                                        "(defaults when omitted)")
        s.add_argument("--out", help="output directory "
                                     "(overrides output.dir)")
        s.add_argument("--seed", type=int, help="master seed (overrides "
                                                "mc.seed)")
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--frames", type=int, help="Monte Carlo frames "
                                                  "(overrides mc.frames)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose
                        else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        over = {}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative", "--seed")
            over.setdefault("mc", {})["seed"] = args.seed
        if args.frames is not None:
            over.setdefault("mc", {})["frames"] = args.frames
        if over:
            cfg = cfg.with_overrides(over)
        if args.threads < 1:
            raise ConfigError("threads must be at least 1", "--threads")
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or cfg.raw["output"]["dir"]
    sc = Scenario(cfg)
    w = _Writer(out_dir, args.command, cfg, cfg.seed)
    try:
        HANDLERS[args.command](sc, w, args)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleBudgetError as exc:
        w.json("infeasible.json", {"status": "infeasible",
                                   "budget": exc.budget,
                                   "message": str(exc)}, "infeasible")
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in w.paths:
        print(p)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
