"""Experiment configuration and the cached model chain built from it.

Configs are YAML files validated against ``data/config_schema.json``.
Missing keys fall back to the reference simulation parameters. Angles are
given in degrees and budgets in dB in the file; both are converted exactly
once here, so everything downstream is radians and linear watts.
"""

import copy
from dataclasses import dataclass
from functools import lru_cache
import hashlib
from importlib import resources
import json
import math

import jsonschema
import numpy as np
import yaml

from .antenna import AntennaConfig, build_geometry
from .beam_detect import BeamErrorMatrix, delta_bar_matrix
from .optimizer import PowerProblem
from .rate_model import Constraints, FramePlan, interference_coeffs
from .sensing import SensingConfig, SensingStats, calibrate_threshold
from .training import (EstimatorStats, SelectionStats, TrainingConfig,
                       default_alpha, estimator_variances,
                       selection_statistics)

__all__ = ["DEFAULTS", "ConfigError", "ExperimentConfig", "load_config",
           "Scenario", "db_to_linear", "linear_to_db"]

DEFAULTS = {
    "schema_version": 1,
    "antenna": {"M": 7, "A0": 0.98, "A1": 0.02, "phi3dB_deg": 20.0,
                "phi1_deg": -55.0, "phi2_deg": 55.0},
    "channel": {"gamma": 0.5, "gamma_ss": 0.1, "gamma_sp": 0.5,
                "sigma_w2": 0.5, "sigma_q2": 0.5, "P_p_W": 0.5,
                "phi_sr_deg": 0.0, "alpha": None},
    "sensing": {"pi1": 0.7, "target_Pd_bar": 0.85, "pd_model": "verbatim"},
    "frame": {"T_f_s": 0.030, "T_s_s": 1e-6, "N_se": 107, "N_tr": 96,
              "P_tr_W": 2.0},
    "budgets": {"P_av_dB": 2.0, "I_av_dB": -15.0,
                "conditioning_mode": "marginal", "detected_beam": None},
    "optimizer": {"grid_nodes": 4000, "p_max_W": 1e4,
                  "dual_method": "bisection", "bcd_tol": 1e-6,
                  "max_cycles": 20, "N_se_bounds": [5, 3000],
                  "N_tr_bounds": [2, 3000]},
    "scheme": "all",
    "mc": {"frames": 100000, "seed": 12345, "trace_limit": 0},
    "output": {"dir": "out"},
}


class ConfigError(ValueError):
    """Schema violation; ``path`` is the JSON path of the offending key."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


@lru_cache(maxsize=1)
def _schema():
    text = resources.files("cograte").joinpath(
        "data/config_schema.json").read_text()
    return json.loads(text)


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _json_path(err):
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}"
                         for p in err.absolute_path)


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    # linear / SI views of the raw fields
    @property
    def M(self):
        return int(self.raw["antenna"]["M"])

    @property
    def P_av(self):
        return float(db_to_linear(self.raw["budgets"]["P_av_dB"]))

    @property
    def I_av(self):
        return float(db_to_linear(self.raw["budgets"]["I_av_dB"]))

    @property
    def T_f(self):
        return float(self.raw["frame"]["T_f_s"])

    @property
    def T_s(self):
        return float(self.raw["frame"]["T_s_s"])

    @property
    def P_tr(self):
        return float(self.raw["frame"]["P_tr_W"])

    @property
    def N_se(self):
        return float(self.raw["frame"]["N_se"])

    @property
    def N_tr(self):
        return float(self.raw["frame"]["N_tr"])

    @property
    def seed(self):
        return int(self.raw["mc"]["seed"])

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, override: dict) -> "ExperimentConfig":
        return load_config(_merge(self.raw, override))


def load_config(source=None) -> ExperimentConfig:
    """Load from a YAML path, a mapping, or ``None`` for the defaults."""
    if source is None:
        data = {"schema_version": 1}
    elif isinstance(source, dict):
        data = source
    else:
        with open(source, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    # validate the user's keys first so unknown keys are reported as typed
    validator = jsonschema.Draft202012Validator(_schema())
    errs = sorted(validator.iter_errors(data), key=lambda e: list(e.path))
    if errs:
        raise ConfigError(errs[0].message, _json_path(errs[0]))
    merged = _merge(DEFAULTS, data)
    errs = sorted(validator.iter_errors(merged), key=lambda e: list(e.path))
    if errs:
        raise ConfigError(errs[0].message, _json_path(errs[0]))
    a = merged["antenna"]
    if a["phi1_deg"] >= a["phi2_deg"]:
        raise ConfigError("phi1_deg must be below phi2_deg",
                          "$.antenna.phi1_deg")
    alpha = merged["channel"]["alpha"]
    if alpha is not None and len(alpha) != a["M"]:
        raise ConfigError(f"expected {a['M']} entries", "$.channel.alpha")
    sw = merged.get("sweep")
    if sw is not None and sw["stop"] < sw["start"]:
        raise ConfigError("empty sweep range (stop < start)", "$.sweep")
    return ExperimentConfig(raw=merged)


class Scenario:
    """Model chain for one configuration, cached per frame split."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        r = cfg.raw
        a, ch = r["antenna"], r["channel"]
        self.antenna: AntennaConfig = build_geometry(
            a["M"], math.radians(a["phi1_deg"]), math.radians(a["phi2_deg"]),
            A0=a["A0"], A1=a["A1"], phi3dB=math.radians(a["phi3dB_deg"]))
        if ch["alpha"] is not None:
            self.alpha = tuple(float(x) for x in ch["alpha"])
        else:
            self.alpha = default_alpha(self.antenna, ch["gamma_ss"],
                                       math.radians(ch["phi_sr_deg"]))
        self.gamma = float(ch["gamma"])
        self.sigma_p2 = float(ch["P_p_W"] * ch["gamma_sp"])
        self._sensing = {}
        self._delta = {}

    @property
    def M(self):
        return self.antenna.M

    def sensing_config(self, N_se) -> SensingConfig:
        ch, se = self.cfg.raw["channel"], self.cfg.raw["sensing"]
        return SensingConfig(N_se=float(N_se), P_p=ch["P_p_W"],
                             sigma_w2=ch["sigma_w2"], gamma=ch["gamma"],
                             pi1=se["pi1"],
                             target_Pd_bar=se["target_Pd_bar"],
                             pd_model=se["pd_model"])

    def sensing(self, N_se) -> SensingStats:
        key = float(N_se)
        if key not in self._sensing:
            self._sensing[key] = calibrate_threshold(
                self.sensing_config(key), self.antenna)
        return self._sensing[key]

    def delta_bar(self, N_se) -> BeamErrorMatrix:
        key = float(N_se)
        if key not in self._delta:
            self._delta[key] = delta_bar_matrix(
                self.sensing(key), self.sensing_config(key), self.antenna)
        return self._delta[key]

    def training_config(self, N_tr) -> TrainingConfig:
        return TrainingConfig(N_tr=float(N_tr), P_tr=self.cfg.P_tr,
                              alpha=self.alpha,
                              sigma_q2=self.cfg.raw["channel"]["sigma_q2"],
                              sigma_p2=self.sigma_p2)

    def estimator(self, N_se, N_tr):
        s = self.sensing(N_se)
        e = estimator_variances(self.training_config(N_tr), s)
        return e, selection_statistics(e, s)

    def plan(self, N_se, N_tr) -> FramePlan:
        return FramePlan(self.cfg.T_f, self.cfg.T_s, float(N_se),
                         float(N_tr), self.M)

    def plan_from_ms(self, T_se_ms, T_tr_ms) -> FramePlan:
        return FramePlan.from_durations(self.cfg.T_f, self.cfg.T_s,
                                        T_se_ms * 1e-3, T_tr_ms * 1e-3,
                                        self.M)

    def coefficients(self, N_se, sel):
        b = self.cfg.raw["budgets"]
        return interference_coeffs(self.delta_bar(N_se), sel,
                                   self.sensing(N_se), self.antenna,
                                   self.gamma, mode=b["conditioning_mode"],
                                   detected_beam=b["detected_beam"])

    def problem(self, N_se, N_tr, P_av=None, I_av=None) -> PowerProblem:
        plan = self.plan(N_se, N_tr)
        s = self.sensing(N_se)
        e, sel = self.estimator(N_se, N_tr)
        b0, u0 = self.coefficients(N_se, sel)
        cons = Constraints(P_av_bar=self.cfg.P_av if P_av is None else P_av,
                           I_av_bar=self.cfg.I_av if I_av is None else I_av,
                           b0=b0, u0=u0,
                           conditioning_mode=self.cfg.raw["budgets"][
                               "conditioning_mode"])
        return PowerProblem(plan=plan, estats=e, sel=sel, sstats=s,
                            constraints=cons, P_tr=self.cfg.P_tr)

    def builder(self, P_av=None, I_av=None):
        n = int(self.cfg.raw["optimizer"]["grid_nodes"])
        return lambda N_se, N_tr: self.problem(
            N_se, N_tr, P_av, I_av).with_grid(n)
