import csv
import json
import re
from pathlib import Path

import pytest

from lsilab import __version__, cli
from lsilab.errors import ConfigError, PipelineError
from lsilab.pipeline import REPORT_FIELDS, emit, refinement_study, run_scenario
from lsilab.scenario import parse_scenario

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """
[scenario]
name = small-torus

[geometry]
kind = clifford
n = 2
refinement = 1

[density]
expression = exp(0.3*cos(theta))

[transport]
r_ladder = 0.5, 2
samples = 25
covering_r = 50
covering_trials = 20
seed = 4
"""


@pytest.fixture(scope="module")
def small_report():
    return run_scenario(parse_scenario(SMALL))


def test_report_contents(small_report):
    rep = small_report
    for key in REPORT_FIELDS:
        assert key in rep
    assert rep["provenance"] == {
        "config_hash": parse_scenario(SMALL).config_hash(),
        "seed": 4,
        "tool_version": __version__,
    }
    assert rep["skipped"] == {}
    assert rep["transport"]["samples"] == 50
    assert rep["all_passed"] is True
    assert all(v["passed"] for v in rep["verdicts"].values())


def test_disabled_checks_are_listed_as_skipped():
    rep = run_scenario(parse_scenario(SMALL + "\n[lemma]\nenabled = false\n").with_refinement(0))
    assert rep["lemma"] is None and "lemma" in rep["skipped"]
    assert "lemma_min_slack" not in rep["verdicts"]
    mesh = SMALL.replace("kind = clifford", "kind = sphere\nvariant = mesh").replace("cos(theta)", "x3")
    rep = run_scenario(parse_scenario(mesh))
    assert "transport" in rep["skipped"] and "transport" not in rep


def test_deterministic_apart_from_timestamp(small_report, tmp_path):
    again = run_scenario(parse_scenario(SMALL))
    emit(small_report, tmp_path / "a")
    emit(again, tmp_path / "b")
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    a.pop("timestamp"), b.pop("timestamp")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    for name in ("transport_sweep.csv", "ratio_scan.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_emit_outputs(small_report, tmp_path):
    written = emit(small_report, tmp_path)
    names = {p.name for p in written}
    assert names == {"report.json", "transport_sweep.csv", "ratio_scan.csv", "plot.gp"}
    back = json.loads((tmp_path / "report.json").read_text())
    for key in REPORT_FIELDS:
        assert back[key] == small_report[key]
    with (tmp_path / "transport_sweep.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == small_report["transport"]["samples"]
    assert list(rows[0])[:3] == ["x_index", "y1", "t"]
    refs = re.findall(r"'([^']+\.csv)'", (tmp_path / "plot.gp").read_text())
    assert refs and set(refs) <= names


def test_study(tmp_path):
    scn = parse_scenario(SMALL.replace("samples = 25", "samples = 10"))
    study = refinement_study(scn, [0, 1])
    assert [r["level"] for r in study["rows"]] == [0, 1]
    assert study["rows"][0]["samples"] < study["rows"][1]["samples"]
    assert "order_abs_deficit" in study["rows"][0]
    written = emit(run_scenario(scn, refine=1), tmp_path, study=study)
    names = {p.name for p in written}
    assert {"convergence.csv", "study.json"} <= names
    refs = set(re.findall(r"'([^']+\.csv)'", (tmp_path / "plot.gp").read_text()))
    assert "convergence.csv" in refs and refs <= names
    with pytest.raises(ConfigError):
        refinement_study(scn, [1])


def test_errors_carry_the_stage():
    scn = parse_scenario((CONFIGS / "sphere_radius2.ini").read_text())
    with pytest.raises(PipelineError, match=r"\[hypotheses\] MeanCurvatureError"):
        run_scenario(scn)
    scn = parse_scenario((CONFIGS / "two_spheres.ini").read_text())
    with pytest.raises(PipelineError, match=r"\[hypotheses\] DisconnectedError"):
        run_scenario(scn)


def test_cli_constants(capsys):
    assert cli.main(["constants", "--n", "2", "--m", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["additive_constant"] == pytest.approx(2.5310242469692907, abs=1e-12)
    assert cli.main(["constants", "--n", "2", "--m", "1", "--theta", "2"]) == 2


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "report.json").is_file()
    assert "PASS covering_fraction" in capsys.readouterr().out
    assert cli.main(["run", str(CONFIGS / "sphere_radius2.ini")]) == 2
    assert "MeanCurvatureError" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["study", str(cfg), "--levels", "1"]) == 2

    def failing(*a, **k):
        rep = run_scenario(parse_scenario(SMALL))
        rep["verdicts"]["covering_fraction"]["passed"] = False
        rep["all_passed"] = False
        return rep

    monkeypatch.setattr(cli, "run_scenario", failing)
    assert cli.main(["run", str(cfg)]) == 1
    assert "FAIL covering_fraction" in capsys.readouterr().out


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.ini")))
def test_shipped_configs_parse(name):
    parse_scenario((CONFIGS / name).read_text())


def test_study_orders():
    from dataclasses import replace

    scn = parse_scenario((CONFIGS / "sphere_equality.ini").read_text())
    scn = replace(scn, transport=replace(scn.transport, enabled=False))
    rows = refinement_study(scn, [3, 4, 5])["rows"]
    assert all(r["order_abs_deficit"] >= 1.5 for r in rows[:-1])
    torus = parse_scenario(SMALL)
    torus = replace(torus, transport=replace(torus.transport, enabled=False))
    rows = refinement_study(torus, [2, 3, 4])["rows"]
    viol = [r["intermediate_violation"] for r in rows]
    assert viol[0] > viol[1] > viol[2]
    assert all(r["slack_violation"] == 0.0 for r in rows)
