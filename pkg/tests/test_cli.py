import json
import shutil
from pathlib import Path

import pytest

from halflab import cli
from halflab.potential import PotentialProfile

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def run(tmp_path, name, *extra):
    return cli.main(["--scenario", str(SCENARIOS / name), "--out", str(tmp_path / "out"), *extra])


def read(tmp_path, name):
    return (tmp_path / "out" / name).read_text()


def test_free_scenario(tmp_path):
    assert run(tmp_path, "free.json") == 0
    eig = json.loads(read(tmp_path, "eigen.json"))
    assert eig["eigenvalues"] == []
    rows = read(tmp_path, "density.csv").splitlines()
    assert rows[0] == "lambda,density"
    report = json.loads(read(tmp_path, "report.json"))
    assert report["status"] == "pass"
    assert {a["file"] for a in report["artifacts"]} == {"eigen.json", "density.csv", "measure.json"}


def test_square_well_sumrule(tmp_path):
    assert run(tmp_path, "square_well_sumrule.json") == 0
    doc = json.loads(read(tmp_path, "sumrule.json"))
    assert doc["relative_margin"] >= 0
    assert doc["seed"] == 20240601


def test_hypothesis_violation_exit_1(tmp_path, capsys):
    assert run(tmp_path, "hypothesis_violation.json") == 1
    assert "hypothesis violation" in capsys.readouterr().err


def test_layers_partition_and_trace(tmp_path, capsys):
    assert run(tmp_path, "single_well_layers.json", "--trace") == 0
    err = capsys.readouterr().err
    assert '"op": "case"' in err
    doc = json.loads(read(tmp_path, "layers.json"))
    assert doc["history"][0]["op"] == "init"
    assert read(tmp_path, "partition.csv").startswith("r,phi_0,phi_1,psi_0")


def test_riccati_scenario(tmp_path):
    assert run(tmp_path, "riccati_bump.json") == 0
    assert read(tmp_path, "riccati.csv").startswith("r,u,A,residual")


def test_byte_identical_artifacts(tmp_path):
    assert cli.main(["--scenario", str(SCENARIOS / "single_well_layers.json"), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["--scenario", str(SCENARIOS / "single_well_layers.json"), "--out", str(tmp_path / "b")]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_report_checksums(tmp_path):
    assert run(tmp_path, "free.json") == 0
    from halflab.io import sha256_file

    report = json.loads(read(tmp_path, "report.json"))
    for art in report["artifacts"]:
        assert sha256_file(tmp_path / "out" / art["file"]) == art["sha256"]


def write(tmp_path, doc):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    return p


@pytest.mark.parametrize(
    "pipeline,prefix",
    [(["partition"], "missing dependency:"), (["sumrule", "eig"], "missing dependency:"), (["bogus"], "unknown stage:")],
)
def test_pipeline_errors(tmp_path, capsys, pipeline, prefix):
    p = write(tmp_path, {"name": "x", "potential": {"kind": "zero"}, "pipeline": pipeline})
    assert cli.main(["--scenario", str(p), "--out", str(tmp_path / "o")]) == 1
    assert capsys.readouterr().err.startswith(prefix)


def test_unreadable_files(tmp_path, capsys):
    assert cli.main(["--scenario", str(tmp_path / "missing.json")]) == 1
    assert capsys.readouterr().err.startswith("unreadable file:")
    p = write(tmp_path, {"name": "x", "potential": "nope.json", "pipeline": ["eig"]})
    assert cli.main(["--scenario", str(p)]) == 1
    assert capsys.readouterr().err.startswith("unreadable file:")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["--scenario", str(bad)]) == 1
    assert capsys.readouterr().err.startswith("unreadable file:")


def test_violation_exit_2(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(cli, "FREE_DENSITY_TOL", -1.0)
    assert run(tmp_path, "free.json") == 2
    out = capsys.readouterr().out
    assert "FAIL" in out and "free_closed_form_rel_error" in out
    assert json.loads(read(tmp_path, "report.json"))["status"] == "violation"


def test_corpus_potential_uses_seed(tmp_path):
    doc = {"name": "c", "potential": {"corpus": "scalar", "index": 0}, "pipeline": ["eig"]}
    p = write(tmp_path, doc)
    assert cli.main(["--scenario", str(p), "--out", str(tmp_path / "a"), "--seed", "5"]) == 0
    assert json.loads((tmp_path / "a" / "eigen.json").read_text())["seed"] == 5


def test_grid_flags(tmp_path):
    doc = {"name": "g", "potential": {"kind": "zero"}, "pipeline": ["eig"]}
    p = write(tmp_path, doc)
    assert cli.main(["--scenario", str(p), "--out", str(tmp_path / "a"), "--grid-h", "0.01", "--grid-L", "20"]) == 0
    grid = json.loads((tmp_path / "a" / "eigen.json").read_text())["grid"]
    assert grid["h"] == pytest.approx(0.01) and grid["L"] == pytest.approx(20)
