from __future__ import annotations

import json
import subprocess
import sys
from decimal import Decimal
from fractions import Fraction

import pytest

from itpfi_lab.cli import main


def _run(capsys, *argv) -> tuple[int, str]:
    code = main(list(argv))
    return code, capsys.readouterr().out


def _json(capsys, *argv) -> dict:
    code, out = _run(capsys, *argv)
    assert code == 0
    return json.loads(out)


def test_tset_diagnose_full_turns(capsys, tmp_path):
    x_file = tmp_path / "x.json"
    x_file.write_text('{"entries": []}')
    doc = _json(capsys, "tset-diagnose", "--x", str(x_file), "--t", "2pi/ln2", "--J", "100")
    assert doc["command"] == "tset-diagnose"
    assert doc["result"]["verdict"] == "ConvergenceEvidence"


def test_construct_t_to_file(capsys, tmp_path):
    out = tmp_path / "trace.json"
    code, printed = _run(capsys, "construct-t", "--x", "zero", "--J", "40", "--out", str(out))
    assert code == 0 and printed == ""
    t = json.loads(out.read_text())["result"]["t"]
    assert abs(Decimal(t["value"]) - Decimal("6.51102385981306871546")) < Decimal("1e-20")


def test_perturb_writes_x(capsys, tmp_path):
    x_out = tmp_path / "x.json"
    doc = _json(capsys, "perturb", "--y", "zero", "--t", "2pi/ln2", "--eps", "0.1", "--J", "200", "--x-out", str(x_out))
    assert doc["result"]["j0"] == 11
    assert doc["result"]["diagnosis"]["verdict"] == "DivergenceEvidence"
    again = _json(capsys, "tset-diagnose", "--x", str(x_out), "--t", "2pi/ln2", "--J", "200")
    assert again["result"]["verdict"] == "DivergenceEvidence"


def test_g_norm_and_orbit_bound(capsys):
    g = '{"entries": [{"j": 1, "value": "0.1"}]}'
    norm = _json(capsys, "g-norm", "--a", g, "--J", "3")["result"]
    assert norm["exact"] == "1/50"
    enclosure = norm["g_norm_sq"]
    assert abs(Fraction(Decimal(enclosure["value"])) - Fraction(1, 50)) <= Fraction(Decimal(enclosure["err"]))
    res = _json(capsys, "orbit-bound", "--a", g, "--J", "3")["result"]
    assert abs(float(res["majorant_total"]["value"]) - 0.021257) < 1e-6
    assert res["dominated"] is True


def test_csv_output(capsys):
    code, out = _run(capsys, "orbit-bound", "--a", '{"entries": [{"j": 2, "value": "1/9"}]}', "--J", "3", "--format", "csv")
    assert code == 0
    assert out.splitlines()[0].startswith("j,aw_term_log2")
    assert len(out.splitlines()) == 4


def test_chain_and_exit_codes(capsys):
    res = _json(capsys, "chain", "--g", '{"entries": [{"j": 1, "value": "1/2"}]}', "--radius-u", "1", "--radius-v", "0.1")["result"]
    assert res["n"] == 8 and res["verified"]
    code, _ = _run(capsys, "chain", "--g", '{"entries": [{"j": 1, "value": "2"}]}', "--radius-u", "1", "--radius-v", "0.1")
    assert code == 2


def test_odometer_overflow_exit(capsys):
    code, _ = _run(capsys, "odometer", "--z", '["2/3", "4/5"]', "--word", "11", "--steps", "1")
    assert code == 2
    code, out = _run(capsys, "odometer", "--z", '["2/3", "4/5"]', "--word", "11", "--steps", "1", "--allow-overflow")
    assert code == 0 and json.loads(out)["result"]["truncated_at_wrap"]


def test_export_measure(capsys):
    res = _json(capsys, "export-measure", "--n-max", "7")["result"]
    assert json.dumps(res).count("64/65") >= 1


def test_precision_exhaustion_exit(capsys):
    code, _ = _run(capsys, "construct-t", "--J", "40", "--precision-ceiling", "300")
    assert code == 3


def test_config_file_and_flag_override(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"target_err": 1e-12, "format": "csv"}))
    code, out = _run(capsys, "type-iii", "--J", "4", "--config", str(cfg), "--format", "json")
    assert code == 0
    assert json.loads(out)["config"]["target_err"] == 1e-12


def test_bad_config_is_usage_error(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"target_err": 5}))
    assert _run(capsys, "type-iii", "--J", "4", "--config", str(cfg))[0] == 1


def test_missing_argument_exits_one():
    proc = subprocess.run([sys.executable, "-m", "itpfi_lab", "construct-t"], capture_output=True)
    assert proc.returncode == 1


def test_dense_approx(capsys):
    y = json.dumps({"entries": [{"j": j, "value": f"1/{j}"} for j in range(1, 51)]})
    res = _json(capsys, "dense-approx", "--y", y, "--eps", "0.1")["result"]
    assert len(res["g"]["entries"]) == 50
    assert res["exact_difference"] is True and res["distance"] == "0"
