import json
import math
import subprocess
import sys

import numpy as np
import pytest

from fewphoton.cli import main
from fewphoton.system import LocalSystem, build_kerr


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def field(out, name):
    for line in out.splitlines():
        if line.startswith(name):
            return line
    raise AssertionError(f"no line starting with {name!r} in\n{out}")


def parse_value(line):
    parts = dict(x.split("=") for x in line.split(": ", 1)[1].split())
    return complex(float(parts["re"]), float(parts["im"]))


def test_eval_resonant_point(capsys):
    code, out, err = run(capsys, "eval", "--kerr", "wc=0,chi=1,gamma=1", "--n", "2", "--p", "0,0", "--k", "0,0")
    assert code == 0
    val = parse_value(field(out, "connected"))
    assert val == pytest.approx(-(8 / math.pi) * (1 + 1j), rel=1e-5)
    assert "principal-value" in err


def test_eval_linear_cavity(capsys):
    code, out, _ = run(capsys, "eval", "--kerr", "wc=0,chi=0,gamma=1", "--n", "2", "--p", "0.1,-0.1", "--k", "0.2,-0.2")
    assert code == 0
    assert abs(parse_value(field(out, "connected"))) < 1e-10


def test_eval_reports_system_metadata(capsys, tmp_path):
    _, out, _ = run(capsys, "eval", "--kerr", "wc=0,chi=1", "--n", "2", "--p", "0.1,-0.1", "--k", "0.2,-0.2")
    assert field(out, "system").endswith("dim=4 bosonic=true")  # default truncation is N + 2
    path = tmp_path / "odd.json"
    sys_ = build_kerr(0, 1, 1, dim=3)
    a = sys_.a_op.copy()
    a[1, 2] = 1.5  # not sqrt(2), so not a truncated boson
    LocalSystem(sys_.h_eff, a, 1.0).save(path)
    _, out, _ = run(capsys, "eval", "--system", str(path), "--p", "0", "--k", "0")
    assert "bosonic=false" in field(out, "system")


def test_eval_off_shell(capsys):
    code, _, err = run(capsys, "eval", "--kerr", "wc=0,chi=1", "--p", "0.1,0.2", "--k", "0.0,0.0")
    assert code == 2
    assert "energy conservation" in err and err.count("\n") == 1


def test_eval_single_photon_reports_transmission(capsys):
    code, out, _ = run(capsys, "eval", "--kerr", "wc=0,chi=1", "--p", "0", "--k", "0")
    assert code == 0
    assert parse_value(field(out, "connected")) == pytest.approx(-1.0)


def test_eval_csv_full(capsys):
    code, out, _ = run(capsys, "eval", "--kerr", "wc=0,chi=1", "--p", "0.3,-0.5", "--k", "0.3,-0.5",
                       "--full", "--format", "csv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "term,blocks,on_support,re,im,abs"
    assert len(lines) == 1 + 1 + 3
    on = [ln for ln in lines[1:] if ",true," in ln]
    off = [ln for ln in lines[1:] if ",false," in ln]
    assert len(on) == 3 and len(off) == 1  # only the swapped pairing is off its support here
    re, im, ab = (float(x) for x in on[0].split(",")[-3:])
    assert math.isclose(abs(complex(re, im)), ab, rel_tol=1e-15)


def test_eval_negative_values_and_capacity(capsys):
    code, _, _ = run(capsys, "eval", "--kerr", "wc=0,chi=1", "--p", "-0.3,0.3", "--k", "-0.1,0.1")
    assert code == 0
    code, _, err = run(capsys, "eval", "--kerr", "wc=0,chi=1", "--p", "0,0,0,0,0", "--k", "0,0,0,0,0")
    assert code == 2 and "at most" in err


def test_eval_mismatched_n(capsys):
    code, _, err = run(capsys, "eval", "--kerr", "wc=0,chi=1", "--n", "3", "--p", "0,0", "--k", "0,0")
    assert code == 2


def test_system_conflict(capsys, tmp_path):
    path = tmp_path / "s.json"
    build_kerr(0, 1, 1, dim=3).save(path)
    code, _, err = run(capsys, "eval", "--kerr", "wc=0,chi=1", "--system", str(path), "--p", "0", "--k", "0")
    assert code == 2 and "either" in err


def test_bad_kerr_spec(capsys):
    code, _, err = run(capsys, "eval", "--kerr", "wc=0,foo=1", "--p", "0", "--k", "0")
    assert code == 2 and "foo" in err


def test_save_system_round_trip(capsys, tmp_path):
    path = tmp_path / "sys.json"
    code, out1, _ = run(capsys, "eval", "--kerr", "wc=0.2,chi=0.7,gamma=1.3,dim=4", "--p", "0.1,0.4",
                        "--k", "0.2,0.3", "--save-system", str(path))
    assert code == 0
    assert LocalSystem.load(path) == build_kerr(0.2, 0.7, 1.3, dim=4)
    code, out2, _ = run(capsys, "eval", "--system", str(path), "--p", "0.1,0.4", "--k", "0.2,0.3")
    assert code == 0 and out1 == out2


def test_config_precedence(capsys, tmp_path):
    cfg = tmp_path / "job.json"
    cfg.write_text(json.dumps({"kerr": "wc=0,chi=0", "p": "0.1,-0.1", "k": "0.2,-0.2"}))
    code, out, _ = run(capsys, "eval", "--config", str(cfg))
    assert code == 0 and abs(parse_value(field(out, "connected"))) < 1e-10
    code, out, _ = run(capsys, "eval", "--config", str(cfg), "--kerr", "wc=0,chi=1")
    assert code == 0 and abs(parse_value(field(out, "connected"))) > 1e-3


def test_scan_rows_and_peak(capsys):
    code, out, _ = run(capsys, "scan", "--kerr", "wc=0,chi=1,gamma=1", "--n", "2", "--total", "-5:5:101")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "total,p1,p2,k1,k2,re,im,abs"
    rows = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    assert rows.shape == (101, 8)
    np.testing.assert_allclose(rows[:, 1] + rows[:, 2], rows[:, 3] + rows[:, 4], atol=1e-12)
    # with equal splitting the single-photon factors pull the peak from the
    # pair pole at 2ωc + χ = 1 toward the one-photon resonance at 0
    peak = rows[np.argmax(rows[:, -1]), 0]
    assert 0.0 <= peak <= 1.0


def test_scan_single_photon_is_unitary(capsys):
    code, out, _ = run(capsys, "scan", "--kerr", "wc=0.3,chi=1", "--n", "1", "--total", "-4:4:41")
    assert code == 0
    mods = [float(ln.split(",")[-1]) for ln in out.splitlines()[1:]]
    assert len(mods) == 41
    assert max(abs(m - 1) for m in mods) < 1e-12


def test_scan_rejects_empty_grid(capsys):
    code, _, err = run(capsys, "scan", "--kerr", "wc=0,chi=1", "--total", "-5:5:0")
    assert code == 2 and "positive" in err


def test_scan_rejects_off_shell_offsets(capsys):
    code, _, err = run(capsys, "scan", "--kerr", "wc=0,chi=1", "--total", "0:1:3", "--p-offsets", "0.5,0")
    assert code == 2


def test_scan_offsets_and_threads_are_deterministic(capsys, monkeypatch, tmp_path):
    args = ["scan", "--kerr", "wc=0,chi=1", "--n", "3", "--total", "-2:2:17",
            "--p-offsets", "0.4,-0.1,-0.3", "--k-offsets", "-0.2,0.5,-0.3"]
    monkeypatch.setenv("FEWPHOTON_THREADS", "1")
    _, one, _ = run(capsys, *args)
    monkeypatch.setenv("FEWPHOTON_THREADS", "4")
    _, four, _ = run(capsys, *args)
    assert one == four
    out = tmp_path / "scan.csv"
    run(capsys, *args, "--output", str(out))
    assert out.read_bytes() == four.encode()
    assert b"\r" not in out.read_bytes()


def test_bad_thread_count(capsys, monkeypatch):
    monkeypatch.setenv("FEWPHOTON_THREADS", "zero")
    code, _, _ = run(capsys, "scan", "--kerr", "wc=0,chi=1", "--total", "0:1:3")
    assert code == 2


def test_machine_format_round_trips(capsys):
    _, out, _ = run(capsys, "scan", "--kerr", "wc=0.1,chi=0.9", "--total", "0.3:0.3:1")
    re = out.splitlines()[1].split(",")[5]
    assert repr(float(re)) == repr(float(repr(float(re))))
    assert len(re.lstrip("-").replace(".", "").lstrip("0")) >= 15


def test_verify_routes(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "routes", "--n", "3")
    assert code == 0
    line = field(out, "check routes-n3")
    assert "PASS" in line
    assert float(line.split("max_deviation=")[1].split()[0]) < 1e-8
    assert out.splitlines()[-1] == "summary: 1/1 passed"


@pytest.mark.parametrize("suite", ["chi-infinity", "pv-cancellation", "counts", "unitarity"])
def test_verify_suites(capsys, suite):
    code, out, _ = run(capsys, "verify", "--suite", suite)
    assert code == 0
    assert "FAIL" not in out


def test_verify_unknown_suite(capsys):
    code, _, err = run(capsys, "verify", "--suite", "nope")
    assert code == 2 and "unknown suite" in err


def test_verify_failure_exit_code(capsys, monkeypatch):
    from fewphoton import checks
    from fewphoton.checks import CheckResult

    monkeypatch.setitem(checks.SUITES, "counts", lambda: [CheckResult("broken", False, 1.0, 0.0)])
    code, out, _ = run(capsys, "verify", "--suite", "counts")
    assert code == 1 and "check broken: FAIL" in out


def test_oracle_single_photon(capsys, tmp_path):
    table, saved = tmp_path / "spec.csv", tmp_path / "run.json"
    code, out, _ = run(capsys, "oracle", "--kerr", "wc=0,chi=1", "--photons", "1",
                       "--table", str(table), "--save-run", str(saved))
    assert code == 0
    assert "PASS" in field(out, "max_deviation")
    assert float(field(out, "fitted_gamma").split()[1]) == pytest.approx(1.0, abs=0.01)
    lines = table.read_text().splitlines()
    assert lines[0] == "k,re,im,abs" and len(lines) == 122
    assert json.loads(saved.read_text())["time"] == 34.0


def test_oracle_two_photon_linear(capsys):
    code, out, _ = run(capsys, "oracle", "--kerr", "wc=0,chi=0", "--photons", "2", "--sites", "240",
                       "--length", "24", "--time", "20", "--position", "6", "--points", "11")
    assert code == 0
    assert "PASS" in field(out, "correlated_norm")


def test_oracle_budget(capsys):
    code, _, err = run(capsys, "oracle", "--kerr", "wc=0,chi=1", "--photons", "2", "--sites", "2000")
    assert code == 2 and "memory budget" in err


def test_oracle_contamination(capsys):
    code, _, err = run(capsys, "oracle", "--kerr", "wc=0,chi=1", "--photons", "1", "--sites", "500", "--time", "70")
    assert code == 2 and "chain end" in err


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["eval", "--bogus"]) == 2
    code, _, err = run(capsys, "eval", "--p", "0", "--k", "0")
    assert code == 2 and "system is required" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fewphoton", "verify", "--suite", "counts"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("suite: counts\n")
