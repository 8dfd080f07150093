import json

import numpy as np
import pytest

from haleform.cli import main
from haleform.serialization import read_json, write_json

SYSTEM = {
    "n": 1,
    "m": 0,
    "delta": 1.0,
    "dop": {"delays": [1.0], "matrices": [[[0.5]]]},
    "rhs": {"terms": [{"type": "linear", "delay": 0.0, "matrix": [[-1.0]]}]},
}

UNSTABLE = {
    "n": 1,
    "m": 0,
    "delta": 1.0,
    "dop": {"delays": [1.0], "matrices": [[[0.0]]]},
    "rhs": {"terms": [{"type": "linear", "delay": 0.0, "matrix": [[1.0]]}]},
}

HISTORY = {"delta": 1.0, "grid": [-1.0, 0.0], "values": [[1.0], [1.0]]}


@pytest.fixture()
def workdir(tmp_path):
    write_json(tmp_path / "sys.json", SYSTEM)
    write_json(tmp_path / "unstable.json", UNSTABLE)
    write_json(tmp_path / "hist.json", HISTORY)
    write_json(tmp_path / "V.json", {"kind": "point-quadratic", "P": [[1.0]]})
    write_json(
        tmp_path / "consts.json", {"variant": "ges", "a1": 1.0, "a2": 1.0, "a3": 1.0}
    )
    return tmp_path


def test_check_dop_stable(workdir):
    out = workdir / "out"
    code = main(["check-dop", str(workdir / "sys.json"), "--out", str(out)])
    assert code == 0
    report = read_json(out / "report.json")
    assert report["result"]["verdict"] == "stable"
    assert report["result"]["gamma0"] == pytest.approx(0.5, abs=1e-9)
    assert report["schema_version"] == 1
    assert len(report["scenario_hash"]) == 64


def test_check_dop_unstable_exit_code(workdir, tmp_path):
    bad = {
        "n": 1, "m": 0, "delta": 1.0,
        "dop": {"delays": [0.5, 1.0], "matrices": [[[0.6]], [[0.6]]]},
        "rhs": {"terms": [{"type": "linear", "delay": 0.0, "matrix": [[-1.0]]}]},
    }
    write_json(tmp_path / "bad.json", bad)
    code = main(["check-dop", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")])
    assert code == 2


def test_simulate_writes_csv(workdir):
    out = workdir / "sim"
    code = main([
        "simulate", str(workdir / "sys.json"), str(workdir / "hist.json"),
        "-T", "2", "--step", "0.01", "--out", str(out),
    ])
    assert code == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x_1,Dx_1"
    first = lines[1].split(",")
    assert float(first[0]) == 0.0
    assert float(first[1]) == 1.0
    assert float(first[2]) == 0.5
    last = lines[-1].split(",")
    assert float(last[0]) == 2.0
    # closed-form value at t = 2
    expect = np.exp(-1.0) * (np.exp(-1.0) - 0.5)
    assert float(last[1]) == pytest.approx(expect, abs=1e-8)


def test_simulate_blowup_exit_code(workdir):
    out = workdir / "blow"
    code = main([
        "simulate", str(workdir / "unstable.json"), str(workdir / "hist.json"),
        "-T", "40", "--step", "0.1", "--out", str(out),
    ])
    assert code == 2
    assert read_json(out / "report.json")["result"]["blowup"] is True


def test_reports_are_byte_identical(workdir):
    code1 = main(["check-dop", str(workdir / "sys.json"), "--out", str(workdir / "r1")])
    code2 = main(["check-dop", str(workdir / "sys.json"), "--out", str(workdir / "r2")])
    assert code1 == code2 == 0
    b1 = (workdir / "r1" / "report.json").read_bytes()
    b2 = (workdir / "r2" / "report.json").read_bytes()
    assert b1 == b2


def test_dplus_report(workdir):
    out = workdir / "dp"
    code = main([
        "dplus", str(workdir / "sys.json"), str(workdir / "V.json"),
        str(workdir / "hist.json"), "--out", str(out),
    ])
    assert code == 0
    result = read_json(out / "report.json")["result"]
    assert result["value"] == pytest.approx(-1.0, abs=1e-3)
    assert result["error_band"] >= 0.0
    assert len(result["quotients"]) == len(result["h_ladder"])


def test_verify_pass_and_violation_exit_codes(workdir):
    write_json(workdir / "Vn.json", {"kind": "dop-norm", "c": 1.0})
    write_json(workdir / "good.json", {"variant": "ges", "a1": 1.0, "a2": 1.0, "a3": 0.9})
    ode = dict(SYSTEM)
    ode["dop"] = {"delays": [1.0], "matrices": [[[0.0]]]}
    write_json(workdir / "ode.json", ode)
    out = workdir / "v1"
    code = main([
        "verify-lk", str(workdir / "ode.json"), "--functional", str(workdir / "Vn.json"),
        "--constants", str(workdir / "good.json"), "--per-shell", "8",
        "--out", str(out), "--tol", "ladder_levels=8",
    ])
    assert code == 0
    report = read_json(out / "report.json")
    assert report["result"]["violations"] == 0

    write_json(workdir / "badc.json", {"variant": "ges", "a1": 1.0, "a2": 0.01, "a3": 0.9})
    out2 = workdir / "v2"
    code = main([
        "verify-lk", str(workdir / "ode.json"), "--functional", str(workdir / "Vn.json"),
        "--constants", str(workdir / "badc.json"), "--per-shell", "8",
        "--out", str(out2),
    ])
    assert code == 2
    report2 = read_json(out2 / "report.json")
    assert report2["result"]["counterexample_files"]


def test_counterexample_round_trip(workdir):
    """Histories emitted by verify-lk feed back into simulate and dplus."""
    write_json(workdir / "Vn.json", {"kind": "dop-norm", "c": 1.0})
    write_json(workdir / "badc.json", {"variant": "ges", "a1": 1.0, "a2": 0.01, "a3": 0.9})
    out = workdir / "ce"
    code = main([
        "verify-lk", str(workdir / "sys.json"), "--functional", str(workdir / "Vn.json"),
        "--constants", str(workdir / "badc.json"), "--per-shell", "6", "--out", str(out),
    ])
    assert code == 2
    ce_files = read_json(out / "report.json")["result"]["counterexample_files"]
    assert ce_files
    ce = out / ce_files[0]
    assert main([
        "simulate", str(workdir / "sys.json"), str(ce), "-T", "1",
        "--step", "0.05", "--out", str(workdir / "ce_sim"),
    ]) == 0
    assert main([
        "dplus", str(workdir / "sys.json"), str(workdir / "V.json"), str(ce),
        "--out", str(workdir / "ce_dp"),
    ]) == 0


def test_estimate_ges_exit_codes(workdir):
    ode = dict(SYSTEM)
    ode["dop"] = {"delays": [1.0], "matrices": [[[0.0]]]}
    write_json(workdir / "ode.json", ode)
    out = workdir / "g1"
    code = main([
        "estimate-ges", str(workdir / "ode.json"), "-T", "10",
        "--step", "0.125", "--out", str(out),
    ])
    assert code == 0
    result = read_json(out / "report.json")["result"]
    assert 0.99 <= result["lambda"] <= 1.01
    assert 1.0 <= result["M"] <= 1.05

    out2 = workdir / "g2"
    code = main([
        "estimate-ges", str(workdir / "unstable.json"), "-T", "10",
        "--step", "0.125", "--out", str(out2),
    ])
    assert code == 2
    result2 = read_json(out2 / "report.json")["result"]
    assert result2["counterexample_file"]


def test_scenario_run_matches_direct_invocation(workdir):
    scenario = {
        "command": "check-dop",
        "system": "sys.json",
        "seed": 5,
        "check-dop": {"resolution": 32},
    }
    write_json(workdir / "scn.json", scenario)
    out = workdir / "scn_out"
    code = main(["run", "--scenario", str(workdir / "scn.json"), "--out", str(out)])
    assert code == 0
    report = read_json(out / "report.json")
    assert report["seed"] == 5
    assert report["result"]["resolution"] == 32
    # identical scenario twice: identical bytes
    out2 = workdir / "scn_out2"
    main(["run", "--scenario", str(workdir / "scn.json"), "--out", str(out2)])
    assert (out / "report.json").read_bytes() == (out2 / "report.json").read_bytes()


def test_scenario_tolerance_overrides(workdir):
    scenario = {
        "command": "check-dop",
        "system": "sys.json",
        "check-dop": {},
        "tolerances": {"margin_tol": 0.001},
    }
    write_json(workdir / "scn.json", scenario)
    out = workdir / "tol_out"
    assert main(["run", "--scenario", str(workdir / "scn.json"), "--out", str(out)]) == 0
    assert read_json(out / "report.json")["result"]["margin_tol"] == 0.001


def test_unknown_command_is_error(workdir, capsys):
    write_json(workdir / "scn.json", {"command": "nonsense"})
    assert main(["run", "--scenario", str(workdir / "scn.json")]) == 1


def test_parse_error_reports_location(workdir, capsys):
    bad = workdir / "broken.json"
    bad.write_text("{ not json }", encoding="utf-8")
    code = main(["check-dop", str(bad), "--out", str(workdir / "x")])
    assert code == 1
    err = capsys.readouterr().err
    assert "line" in err


def test_construct_converse_writes_functional(workdir):
    ode = dict(SYSTEM)
    ode["dop"] = {"delays": [1.0], "matrices": [[[0.0]]]}
    write_json(workdir / "ode.json", ode)
    out = workdir / "conv"
    code = main([
        "construct-converse", str(workdir / "ode.json"), "--step", "0.125",
        "--out", str(out),
    ])
    assert code == 0
    spec = read_json(out / "functional.json")
    assert spec["kind"] == "converse"
    assert spec["rate"] > 0
    # emitted functional is loadable by dplus
    code = main([
        "dplus", str(workdir / "ode.json"), str(out / "functional.json"),
        str(workdir / "hist.json"), "--out", str(workdir / "conv_dp"),
        "--tol", "ladder_levels=6",
    ])
    assert code == 0


def test_attraction_command(workdir):
    ode = dict(SYSTEM)
    ode["dop"] = {"delays": [1.0], "matrices": [[[0.0]]]}
    write_json(workdir / "ode.json", ode)
    out = workdir / "att"
    code = main([
        "attraction", str(workdir / "ode.json"), "--bound", "1.0",
        "--eps", str(float(np.exp(-2.0))), "--samples", "8", "-T", "10",
        "--step", "0.125", "--out", str(out),
    ])
    assert code == 0
    result = read_json(out / "report.json")["result"]
    assert result["status"] == "settled"
    assert abs(result["settle_time"] - 2.0) <= 0.2


def test_iss_probe_command(tmp_path):
    system = {
        "n": 1, "m": 1, "delta": 1.0,
        "dop": {"delays": [1.0], "matrices": [[[0.0]]]},
        "rhs": {"terms": [
            {"type": "linear", "delay": 0.0, "matrix": [[-1.0]]},
            {"type": "input", "matrix": [[1.0]]},
        ]},
    }
    write_json(tmp_path / "sys.json", system)
    out = tmp_path / "iss"
    code = main([
        "iss-probe", str(tmp_path / "sys.json"), "-T", "8", "--step", "0.125",
        "--per-shell", "4", "--out", str(out),
    ])
    assert code == 0
    result = read_json(out / "report.json")["result"]
    assert result["is_iss"] is True
    assert result["violations"] == 0
    assert 0.9 <= result["gamma_slope"] <= 1.1


def test_fit_lk_writes_constants(workdir):
    ode = dict(SYSTEM)
    ode["dop"] = {"delays": [1.0], "matrices": [[[0.0]]]}
    write_json(workdir / "ode.json", ode)
    out = workdir / "fit"
    code = main([
        "fit-lk", str(workdir / "ode.json"), "--functional", str(workdir / "V.json"),
        "--variant", "ges", "--per-shell", "12", "--out", str(out),
        "--tol", "ladder_levels=8",
    ])
    assert code == 0
    constants = read_json(out / "constants.json")
    assert constants["variant"] == "ges"
    assert constants["a3"] == pytest.approx(2.0, abs=0.1)
    # fitted constants feed back into verify-lk
    code = main([
        "verify-lk", str(workdir / "ode.json"), "--functional", str(workdir / "V.json"),
        "--constants", str(out / "constants.json"), "--per-shell", "6",
        "--out", str(workdir / "fit_verify"), "--tol", "ladder_levels=8",
    ])
    assert code in (0, 3)  # pass, or inconclusive band straddles


def test_fit_lk_unstable_exit_code(workdir):
    out = workdir / "fit_bad"
    code = main([
        "fit-lk", str(workdir / "unstable.json"), "--functional", str(workdir / "V.json"),
        "--variant", "ges", "--per-shell", "8", "--out", str(out),
        "--tol", "ladder_levels=8",
    ])
    assert code == 2
    report = read_json(out / "report.json")
    assert report["result"]["failure"]


def test_verify_seminorm_variant_via_scenario(workdir):
    ode = dict(SYSTEM)
    ode["dop"] = {"delays": [1.0], "matrices": [[[0.0]]]}
    write_json(workdir / "ode.json", ode)
    write_json(workdir / "Vn.json", {"kind": "dop-norm", "c": 1.0})
    scenario = {
        "command": "verify-lk",
        "system": "ode.json",
        "seed": 3,
        "verify": {
            "functional": "Vn.json",
            "constants": {
                "variant": "ges-seminorm",
                "a1": 1.0, "a2": 1.0, "a3": 0.9, "a4": 1.0,
                "seminorm": {"kind": "dop-seminorm"},
            },
            "samples": {"per_shell": 6},
            "ladder_levels": 8,
        },
    }
    write_json(workdir / "scn.json", scenario)
    code = main(["run", "--scenario", str(workdir / "scn.json"), "--out", str(workdir / "sn")])
    assert code == 0
    report = read_json(workdir / "sn" / "report.json")
    assert report["result"]["violations"] == 0


def test_missing_file_is_clean_error(workdir, capsys):
    code = main(["check-dop", str(workdir / "absent.json"), "--out", str(workdir / "x2")])
    assert code == 1
    assert "error:" in capsys.readouterr().err
