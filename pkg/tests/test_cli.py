import json
from pathlib import Path

import pytest

from covfk import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, text, name="cfg.json"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


FK_OK = """{
  "schema": "covfk.fk/1",
  "geometry": {"kind": "circle"},
  "psi": "cos(theta)",
  "x": {"coords": [0.3]},
  "t": 0.5,
  "mc": {"n_paths": 400, "dt": 0.05, "seed": 1}
}
"""


def test_fk_success_and_result_layout(tmp_path, capsys):
    code, out, _ = run(["fk", "--config", write(tmp_path, FK_OK), "--no-timing"], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["schema"] == "covfk.result/1" and res["command"] == "fk" and res["pass"] is True
    assert "timing" not in res
    assert set(res["versions"]) >= {"covfk", "numpy", "scipy"}
    assert res["config"]["psi"] == "cos(theta)"
    assert res["checks"] and all(c["passed"] for c in res["checks"])
    code, out, _ = run(["fk", "--config", write(tmp_path, FK_OK)], capsys)
    assert "timing" in json.loads(out)


def test_output_is_sorted_and_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, FK_OK)
    a = run(["fk", "--config", cfg, "--no-timing"], capsys)[1]
    b = run(["fk", "--config", cfg, "--no-timing", "--workers", "3"], capsys)[1]
    assert a == b
    assert a == cli.dumps(json.loads(a))


def test_seed_override(tmp_path, capsys):
    cfg = write(tmp_path, FK_OK)
    a = json.loads(run(["fk", "--config", cfg, "--no-timing"], capsys)[1])
    b = json.loads(run(["fk", "--config", cfg, "--no-timing", "--seed", "2"], capsys)[1])
    assert b["config"]["mc"]["seed"] == 2
    assert a["estimate"]["mean"] != b["estimate"]["mean"]


def test_out_file(tmp_path, capsys):
    dest = tmp_path / "res.json"
    code, out, _ = run(["fk", "--config", write(tmp_path, FK_OK), "--out", str(dest), "--no-timing"], capsys)
    assert code == 0 and out == ""
    assert json.loads(dest.read_text())["command"] == "fk"


def test_mc_aliases(tmp_path, capsys):
    alias = FK_OK.replace('"n_paths": 400', '"paths": 400').replace('"seed": 1}', '"seed": 1, "bridge": {"delta": 0.1}}')
    a = json.loads(run(["fk", "--config", write(tmp_path, FK_OK), "--no-timing"], capsys)[1])
    b = json.loads(run(["fk", "--config", write(tmp_path, alias, "b.json"), "--no-timing"], capsys)[1])
    assert a["estimate"] == b["estimate"]
    both = FK_OK.replace('"n_paths": 400', '"n_paths": 400, "paths": 400')
    assert run(["fk", "--config", write(tmp_path, both, "c.json")], capsys)[0] == 2


@pytest.mark.parametrize(
    "edit,line,needle",
    [
        (('"t": 0.5', '"t": 0.5,'), None, "malformed JSON"),
        (('"t": 0.5', '"t": -1'), 6, "t"),
        (('"psi": "cos(theta)"', '"psi": "__import__(\'os\')"'), 4, "psi"),
        (('"psi": "cos(theta)"', '"psi": "cos(theta)", "colour": 1'), 4, "colour"),
        (('"dt": 0.05', '"dt": 0'), 7, "dt"),
        (('"kind": "circle"', '"kind": "klein_bottle"'), 3, "kind"),
    ],
)
def test_config_errors_exit_2_with_location(tmp_path, capsys, edit, line, needle):
    cfg = write(tmp_path, FK_OK.replace(*edit))
    code, out, err = run(["fk", "--config", cfg], capsys)
    assert code == 2 and out == ""
    assert err.startswith("covfk: config error:")
    assert needle in err
    if line is not None:
        assert f"cfg.json:{line}:" in err


def test_missing_or_unreadable_config(tmp_path, capsys):
    assert run(["fk"], capsys)[0] == 2
    assert run(["fk", "--config", str(tmp_path / "nope.json")], capsys)[0] == 2
    assert run(["teleport"], capsys)[0] == 2
    assert run(["fk", "--config", write(tmp_path, FK_OK), "--workers", "0"], capsys)[0] == 2
    assert run(["trace", "--config", write(tmp_path, FK_OK)], capsys)[0] == 2  # wrong schema


def test_fault_fails_the_trace_preflight(capsys):
    cfg = str(CONFIGS / "trace_circle.json")
    code, out, err = run(["trace", "--config", cfg, "--no-timing", "--fault", "berezin_sign"], capsys)
    assert code == 1
    res = json.loads(out)
    assert res["pass"] is False and res["preflight"]["passed"] is False
    assert "acceptance check failed" in err


def test_chern_zero_alpha1(capsys):
    code, out, _ = run(["chern", "--config", str(CONFIGS / "chern_n1_zero.json"), "--no-timing"], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["checks"][0]["bar"] == 0 and res["checks"][0]["error"] == 0


def test_validate_command(capsys):
    code, out, err = run(["validate", "--suite", "paths", "--no-timing"], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["suite"] == "paths" and "timing" not in res
    assert all("wall_time" not in s for s in res["suites"])
    assert "PASS" in err
    code, out, err = run(["validate", "--suite", "transport", "--fault", "christoffel_sign"], capsys)
    assert code == 1
    assert "FAIL" in err


def test_golden_round_trip(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("COVFK_GOLDEN_DIR", str(tmp_path))
    cfg = write(tmp_path, FK_OK)
    assert run(["fk", "--config", cfg, "--golden", "g.json"], capsys)[0] == 1  # nothing to compare yet
    assert run(["fk", "--config", cfg, "--golden", "g.json", "--update-golden"], capsys)[0] == 0
    # timing and versions are ignored
    assert run(["fk", "--config", cfg, "--golden", "g.json", "--no-timing"], capsys)[0] == 0
    code, _, err = run(["fk", "--config", cfg, "--golden", "g.json", "--seed", "9"], capsys)
    assert code == 1 and "differs" in err
    monkeypatch.delenv("COVFK_GOLDEN_DIR")
    assert run(["fk", "--config", cfg, "--golden", "g.json"], capsys)[0] == 2


def test_first_difference():
    assert cli._first_difference({"a": [1.0, 2.0]}, {"a": [1.0, 2.0 + 1e-13]}) is None
    assert cli._first_difference({"a": [1.0, 2.0]}, {"a": [1.0, 2.1]}) == "$.a[1]"
    assert cli._first_difference({"a": 1}, {"b": 1}) == "$"
    assert cli._first_difference({"a": 1.0, "timing": 1}, {"a": 1.0, "timing": 2}) is None
    assert cli._first_difference(True, 1.0) == "$"
