import pytest

from covfk import faults
from covfk.errors import ConfigError
from covfk.validate import SUITES, run_suite, summary_table


@pytest.fixture(scope="module")
def clean_report():
    return run_suite("all")


def test_all_suites_pass_without_faults(clean_report):
    assert [s["suite"] for s in clean_report["suites"]] == list(SUITES)
    failed = [(s["suite"], c["name"]) for s in clean_report["suites"] for c in s["checks"] if not c["passed"]]
    assert clean_report["passed"], failed
    assert all(s["checks"] for s in clean_report["suites"])


@pytest.mark.parametrize("fault,suite", [("christoffel_sign", "transport"), ("christoffel_sign", "geometry"), ("berezin_sign", "trace")])
def test_faults_are_caught(fault, suite):
    rep = run_suite(suite, [fault])
    assert not rep["passed"]
    assert rep["faults"] == [fault]
    # the switch is released afterwards
    assert not faults.active(fault)


def test_unknown_suite_and_fault():
    with pytest.raises(ConfigError):
        run_suite("nonsense")
    with pytest.raises(ValueError):
        run_suite("paths", ["gravity_sign"])


def test_summary_table(clean_report):
    lines = summary_table(clean_report).splitlines()
    assert lines[0].split() == ["suite", "checks", "failed", "status"]
    assert len(lines) == 1 + len(SUITES)
    assert all(line.endswith("PASS") for line in lines[1:])
    bad = {"suites": [{"suite": "fk", "passed": False, "checks": [], "error": "boom"}]}
    assert summary_table(bad).splitlines()[1].split() == ["fk", "0", "1", "FAIL"]
