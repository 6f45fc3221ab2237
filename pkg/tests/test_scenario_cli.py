import json
import os
from pathlib import Path

import jsonschema
import numpy as np
import pytest
import yaml

from cograte.cli import ordering_flag, outage_ordering, run
from cograte.scenario import (ConfigError, Scenario, db_to_linear,
                              linear_to_db, load_config)

ROOT = Path(__file__).resolve().parents[1]
SCHEMA = json.loads((ROOT / "src/cograte/data/output_schema.json").read_text())


def _write_cfg(tmp_path, body, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(dict({"schema_version": 1}, **body)))
    return str(p)


def _validate(payload, kind):
    jsonschema.validate(payload, {"$ref": f"#/$defs/{kind}",
                                  "$defs": SCHEMA["$defs"]})


def _strip_time(path):
    lines = Path(path).read_bytes().split(b"\n")
    return b"\n".join(l for l in lines
                      if b"# generated" not in l and b'"generated"' not in l)


# --- config ---------------------------------------------------------------

def test_shipped_defaults_file_matches_builtin_defaults():
    a = load_config(str(ROOT / "configs/defaults.yaml"))
    assert a.raw == load_config().raw
    assert a.config_hash() == load_config().config_hash()


def test_defaults_in_linear_units():
    cfg = load_config()
    assert cfg.P_av == pytest.approx(10 ** 0.2)
    assert cfg.I_av == pytest.approx(10 ** -1.5)
    assert linear_to_db(db_to_linear(-15.0)) == pytest.approx(-15.0)
    sc = Scenario(cfg)
    assert sc.sigma_p2 == pytest.approx(0.25)


@pytest.mark.parametrize("body,path", [
    ({"antenna": {"M": 7, "beams": 3}}, "$.antenna"),
    ({"budgets": {"P_av_dB": "two"}}, "$.budgets.P_av_dB"),
    ({"frame": {"N_se": -5}}, "$.frame.N_se"),
    ({"colour": 1}, "$"),
    ({"sensing": {"pi1": 1.0}}, "$.sensing.pi1"),
])
def test_schema_errors_name_the_key(body, path):
    with pytest.raises(ConfigError) as ei:
        load_config(dict({"schema_version": 1}, **body))
    assert ei.value.path == path


def test_schema_version_required():
    with pytest.raises(ConfigError):
        load_config({"antenna": {"M": 7}})


def test_alpha_length_checked():
    with pytest.raises(ConfigError) as ei:
        load_config({"schema_version": 1, "channel": {"alpha": [0.1, 0.2]}})
    assert ei.value.path == "$.channel.alpha"


def test_hash_changes_with_content():
    a = load_config().config_hash()
    b = load_config({"schema_version": 1,
                     "budgets": {"I_av_dB": -14.0}}).config_hash()
    assert a != b and len(a) == 16


# --- cli --------------------------------------------------------------------

def test_unknown_key_exit_code_and_message(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"frame": {"N_sens": 3}})
    out = tmp_path / "o"
    assert run(["calibrate", "--config", cfg, "--out", str(out)]) == 2
    assert "$.frame" in capsys.readouterr().err
    assert not out.exists()


def test_empty_sweep_writes_nothing(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"sweep": {"variable": "I_av_dB",
                                          "start": -10.0, "stop": -18.0,
                                          "step": 0.5}})
    out = tmp_path / "o"
    assert run(["sweep", "--config", cfg, "--out", str(out)]) == 2
    assert "$.sweep" in capsys.readouterr().err
    assert not out.exists()


def test_sweep_without_section(tmp_path):
    out = tmp_path / "o"
    assert run(["sweep", "--out", str(out)]) == 2
    assert not out.exists()


def test_bad_flags(tmp_path):
    assert run(["calibrate", "--seed", "-1", "--out", str(tmp_path)]) == 2
    assert run(["calibrate", "--threads", "0", "--out", str(tmp_path)]) == 2
    assert run(["calibrate", "--config", str(tmp_path / "missing.yaml"),
                "--out", str(tmp_path)]) == 2


def test_calibrate_json(tmp_path):
    assert run(["calibrate", "--out", str(tmp_path), "--seed", "7"]) == 0
    d = json.loads((tmp_path / "calibrate.json").read_text())
    _validate(d, "calibrate")
    assert d["meta"]["seed"] == 7
    assert d["meta"]["config_hash"] == load_config(
        {"schema_version": 1, "mc": {"seed": 7}}).config_hash()
    assert d["Pd_bar"] == pytest.approx(0.85, abs=1e-9)
    assert d["beta0"] + d["beta1"] == pytest.approx(d["pihat0"], abs=1e-12)


def test_beam_matrix_csv(tmp_path):
    assert run(["beam-matrix", "--out", str(tmp_path)]) == 0
    raw = (tmp_path / "beam_matrix.csv").read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode().splitlines()
    assert lines[0].startswith("# cograte beam-matrix config_hash=")
    assert "seed=12345" in lines[0]
    assert lines[1].startswith("# generated")
    header = lines[2].split(",")
    assert header[0] == "detected_beam[index]" and len(header) == 8
    D = np.array([[float(x) for x in l.split(",")[1:]] for l in lines[3:]])
    assert D.shape == (7, 7)
    assert D.sum() == pytest.approx(1.0, abs=1e-9)


def test_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["beam-matrix", "--out", str(d)]) == 0
        assert run(["calibrate", "--out", str(d)]) == 0
    for name in ("beam_matrix.csv", "calibrate.json"):
        assert _strip_time(a / name) == _strip_time(b / name)


def test_sweep_csv_and_thread_independence(tmp_path):
    cfg = _write_cfg(tmp_path, {"sweep": {"variable": "T_tr_ms",
                                          "start": 0.4, "stop": 0.8,
                                          "step": 0.2},
                                "optimizer": {"grid_nodes": 400}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["sweep", "--config", cfg, "--out", str(a)]) == 0
    assert run(["sweep", "--config", cfg, "--out", str(b),
                "--threads", "3"]) == 0
    assert _strip_time(a / "sweep_T_tr_ms.csv") == \
        _strip_time(b / "sweep_T_tr_ms.csv")
    lines = (a / "sweep_T_tr_ms.csv").read_text().splitlines()
    assert lines[2].split(",")[0] == "T_tr[ms]"
    rows = [list(map(float, l.split(","))) for l in lines[3:]]
    assert [r[0] for r in rows] == pytest.approx([0.4, 0.6, 0.8])
    for r in rows:
        assert r[5] >= r[4] > 0     # S2 >= S1


def test_infeasible_report(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"budgets": {"P_av_dB": -30.0},
                                "scheme": "optimal"})
    assert run(["policy", "--config", cfg, "--out", str(tmp_path)]) == 3
    d = json.loads((tmp_path / "infeasible.json").read_text())
    _validate(d, "infeasible")
    assert d["budget"] == "ATPC"
    assert "infeasible" in capsys.readouterr().err


def test_verify_report(tmp_path):
    cfg = _write_cfg(tmp_path, {"mc": {"trace_limit": 3},
                                "optimizer": {"grid_nodes": 400}})
    assert run(["verify", "--config", cfg, "--out", str(tmp_path),
                "--frames", "3000"]) == 0
    d = json.loads((tmp_path / "verify.json").read_text())
    _validate(d, "verify")
    assert d["frames"] == 3000
    assert d["passed"] + d["failed"] == len(d["checks"])
    assert "mutually inconsistent" in d["flags"][0]
    text = (tmp_path / "verify.txt").read_text()
    assert "FLAG" in text and ("PASS" in text or "FAIL" in text)
    assert len((tmp_path / "trace.csv").read_text().splitlines()) == 3 + 3


def test_outage_ordering_report():
    sc = Scenario(load_config({"schema_version": 1,
                               "optimizer": {"grid_nodes": 1000}}))
    o = outage_ordering(sc, I_av=10 ** -1.2)
    assert o["outage_follows_cutoffs"]
    assert set(o["cutoff_order"]) == {"optimal", "S1", "S2"}
    assert o["cutoff"]["optimal"] <= min(o["cutoff"]["S1"],
                                         o["cutoff"]["S2"])
    text = ordering_flag(o)
    assert "computed zeta_optimal" in text


def test_console_script_installed():
    import shutil
    assert shutil.which("cograte") is not None
