import json
import math

import numpy as np
import pytest

from dbarlab import __version__
from dbarlab.cli import ExperimentConfig, main, run, validate
from dbarlab.errors import ConfigError
from dbarlab.report import _plain, fit_loglog, read_csv, render_csv, write_csv, write_json


def call(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def load(path):
    return json.loads(path.read_text())


# ---------------------------------------------------------------- verbs

def test_verify_sharpness_run(tmp_path, capsys):
    code, out, _ = call(capsys, "verify", "sharpness", "--case", "ex27", "--p", 3, "--out", tmp_path)
    assert code == 0
    assert json.loads(out)["verdict"] == "CERTIFIED-SHARP"
    assert load(tmp_path / "verdict.json")["verdict"] == "CERTIFIED-SHARP"
    rows = read_csv(tmp_path / "trace.csv")
    assert {"series", "level", "value"} <= set(rows[0])
    man = load(tmp_path / "manifest.json")
    assert man["version"] == __version__ and man["config"]["case"] == "ex27"
    assert set(man["outputs"]) == {"trace.csv", "verdict.json"}
    assert "certify_sharpness" in man["timings"]


def test_manifest_hashes_match(tmp_path, capsys):
    import hashlib

    call(capsys, "grid", "check", "--out", tmp_path)
    man = load(tmp_path / "manifest.json")
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest


def test_weights_ap_one(tmp_path, capsys):
    code, _, _ = call(capsys, "weights", "ap", "--weight", "one", "--p", 2, "--out", tmp_path)
    assert code == 0
    v = load(tmp_path / "verdict.json")
    assert v["verdict"] == "FINITE"
    assert v["summary"]["constant"] == pytest.approx(1.0, abs=1e-6)


def test_weights_list(tmp_path, capsys):
    assert call(capsys, "weights", "list", "--out", tmp_path)[0] == 0
    names = {r["name"] for r in read_csv(tmp_path / "weights.csv")}
    assert {"one", "abs2", "w2abs2", "diag"} <= names


def test_hartogs_solve_run(tmp_path, capsys):
    code, _, _ = call(capsys, "hartogs", "solve", "--p", 4, "--case", "constructed-1", "--out", tmp_path)
    assert code == 0
    v = load(tmp_path / "verdict.json")
    assert v["verdict"] == "SOLVED" and v["summary"]["residual_max"] <= 1e-2


def test_hartogs_threshold_refused(tmp_path, capsys):
    code, _, err = call(capsys, "hartogs", "solve", "--p", 3.5, "--out", tmp_path)
    assert code == 2
    assert "below 4" in err
    assert not (tmp_path / "manifest.json").exists()


def test_extend_test_run(tmp_path, capsys):
    code, _, _ = call(capsys, "hartogs", "extend-test", "--datum", "w2", "--k-ladder", "8,16,32,64",
                      "--out", tmp_path, "--plots")
    assert code == 0
    assert load(tmp_path / "verdict.json")["verdict"] == "EXTENDS"
    assert (tmp_path / "extension.svg").exists()


def test_riesz_and_dbar_runs(tmp_path, capsys):
    assert call(capsys, "riesz", "probe", "--resolution", "4,8", "--levels", 2, "--p", 3, "--out", tmp_path / "r")[0] == 0
    assert load(tmp_path / "r" / "verdict.json")["kind"] == "riesz-probe"
    assert call(capsys, "dbar", "canonical", "--resolution", "8,16", "--datum", "conj-product",
                "--out", tmp_path / "d")[0] == 0
    v = load(tmp_path / "d" / "verdict.json")
    assert v["summary"]["method"] == "CANONICAL"
    assert (tmp_path / "d" / "solution.csv").exists()


def test_thread_cap_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DBARLAB_THREADS", "1")
    assert call(capsys, "grid", "check", "--out", tmp_path)[0] == 0


# ---------------------------------------------------------------- determinism

def test_identical_configs_give_identical_bytes(tmp_path, capsys):
    for sub in ("a", "b"):
        call(capsys, "dbar", "solve", "--resolution", "8,16", "--datum", "exp-conj", "--out", tmp_path / sub)
        call(capsys, "verify", "sharpness", "--case", "ex35", "--p", 4, "--out", tmp_path / sub / "v", "--plots")
    for name in ("solution.csv", "verdict.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for name in ("trace.csv", "trace.svg", "verdict.json"):
        assert (tmp_path / "a" / "v" / name).read_bytes() == (tmp_path / "b" / "v" / name).read_bytes()


# ---------------------------------------------------------------- validation

NEGATIVE = [
    (["grid", "bogus"], "takes one of"),
    (["grid", "check", "--resolution", "0,4"], "resolution must be two positive integers"),
    (["grid", "check", "--resolution", "4"], "resolution must be two positive integers"),
    (["grid", "check", "--levels", "0"], "levels must be a positive integer"),
    (["weights", "ap", "--weight", "nope"], "unknown weight"),
    (["weights", "ap", "--weight", "power:x"], "exponent must be a number"),
    (["weights", "ap", "--p", "1"], "p must be a number > 1"),
    (["weights", "dilation", "--dilations", "1,-1"], "dilations must be"),
    (["riesz", "probe", "--alpha", "1,2"], "alpha entries must lie in (0, 2)"),
    (["riesz", "probe", "--alpha", "1"], "alpha has 1 entries"),
    (["riesz", "probe", "--weight", "diag"], "riesz probe weights"),
    (["riesz", "probe", "--resolution", "64,128", "--levels", "3"], "node cap"),
    (["dbar", "solve", "--datum", "nope"], "unknown datum"),
    (["dbar", "solve", "--domain", "disc"], "dbar solves run on the bidisc"),
    (["dbar", "canonical", "--degree", "9"], "exceeds n_theta/4"),
    (["dbar", "canonical", "--weight", "abs2"], "canonical weights"),
    (["dbar", "solve", "--resolution", "2,8"], "at least 3 rings"),
    (["hartogs", "solve", "--p", "3"], "below 4"),
    (["hartogs", "solve", "--case", "nope"], "unknown Hartogs datum"),
    (["hartogs", "solve", "--puncture", "1.5"], "puncture radius"),
    (["hartogs", "extend-test", "--datum", "nope"], "unknown extension datum"),
    (["hartogs", "extend-test", "--k-ladder", "8,4"], "k_ladder must be an increasing list"),
    (["verify", "sharpness"], "case must be one of"),
    (["verify", "sharpness", "--case", "ex27", "--levels", "3"], "levels >= 4"),
    (["verify", "sharpness", "--case", "ex27", "--resolution", "16,32"], "at least 64 angular nodes"),
    (["verify", "sharpness", "--case", "ex26", "--p", "2", "--eps", "1", "--s-exp", "0.9"], "(1, 2)"),
    (["verify", "sharpness", "--case", "ex26", "--p", "2"], "ex26 needs eps > 0"),
]


@pytest.mark.parametrize("argv,message", NEGATIVE, ids=[" ".join(a) for a, _ in NEGATIVE])
def test_negative_config(tmp_path, capsys, argv, message):
    code, _, err = call(capsys, *argv, "--out", tmp_path / "run")
    assert code == 2
    assert message in err
    assert not (tmp_path / "run").exists()


def test_all_problems_reported_together():
    cfg = ExperimentConfig(verb="verify", action="sharpness", resolution=[0, 8], levels=2, p=0.5, case="ex99")
    with pytest.raises(ConfigError) as info:
        validate(cfg)
    text = str(info.value)
    for part in ("resolution", "p must be", "case must be", "levels >= 4"):
        assert part in text


def test_unknown_verb():
    with pytest.raises(ConfigError):
        validate(ExperimentConfig(verb="nope"))


def test_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"resolution": [4, 8], "domain": "disc", "out": str(tmp_path / "x")}))
    assert call(capsys, "grid", "check", "--config", cfg, "--resolution", "6,12")[0] == 0
    man = load(tmp_path / "x" / "manifest.json")
    assert man["config"]["resolution"] == [6, 12] and man["config"]["domain"] == "disc"
    cfg.write_text(json.dumps({"resolutoin": [4, 8]}))
    code, _, err = call(capsys, "grid", "check", "--config", cfg, "--out", tmp_path / "y")
    assert code == 2 and "unknown config key 'resolutoin'" in err
    cfg.write_text("{not json")
    assert call(capsys, "grid", "check", "--config", cfg, "--out", tmp_path / "y")[0] == 2


# ---------------------------------------------------------------- report rendering

def test_report_render(tmp_path, capsys):
    call(capsys, "verify", "sharpness", "--case", "ex27", "--p", 3, "--out", tmp_path)
    code, _, _ = call(capsys, "report", "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "trace.svg").read_text().lstrip().startswith("<?xml")
    assert "forbidden_verdict" in (tmp_path / "summary.txt").read_text()
    man = load(tmp_path / "manifest.json")
    assert {"trace.svg", "summary.txt", "trace.csv"} <= set(man["outputs"])
    assert man["verdict"] == "CERTIFIED-SHARP"


def test_report_without_run(tmp_path, capsys):
    code, _, err = call(capsys, "report", "--out", tmp_path)
    assert code == 2 and "no manifest" in err


def test_report_missing_output(tmp_path, capsys):
    call(capsys, "grid", "check", "--out", tmp_path)
    (tmp_path / "rings.csv").unlink()
    code, _, err = call(capsys, "report", "--out", tmp_path)
    assert code == 2 and "rings.csv" in err


def test_render_empty_trace(tmp_path):
    p = tmp_path / "trace.csv"
    write_csv([], p, columns=["level", "value"])
    with pytest.raises(ConfigError, match="empty trace"):
        render_csv(p)


def test_render_slope_fit(tmp_path):
    rows = [{"k": k, "term": "t", "value": 3.0 / k} for k in (2, 4, 8, 16, 32)]
    p = write_csv(rows, tmp_path / "fit.csv")
    (svg,) = render_csv(p)
    text = svg.read_text()
    assert "slope -1.000" in text


def test_fit_loglog():
    x = np.array([1, 2, 4, 8, 16.0])
    fit = fit_loglog(x, 5 * x**-1.5)
    assert fit["slope"] == pytest.approx(-1.5) and fit["ci"] == pytest.approx(0, abs=1e-9)
    assert math.isnan(fit_loglog([1.0], [1.0])["slope"])


def test_writers_are_plain(tmp_path):
    write_json({"a": np.float64(0.1), "b": float("inf"), "c": 1 + 2j, "d": np.arange(2), "e": np.bool_(True)},
               tmp_path / "x.json")
    data = load(tmp_path / "x.json")
    assert data == {"a": 0.1, "b": "inf", "c": {"re": 1.0, "im": 2.0}, "d": [0, 1], "e": True}
    write_csv([{"v": 0.1 + 0.2}], tmp_path / "x.csv")
    assert read_csv(tmp_path / "x.csv")[0]["v"] == repr(0.1 + 0.2)
    assert _plain(float("nan")) == "nan"


def test_run_api(tmp_path):
    man = run(ExperimentConfig(verb="grid", action="check", out=str(tmp_path), resolution=[3, 5]))
    assert man.verdict == "OK"
