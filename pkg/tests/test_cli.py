import csv
import json

import pytest

from scnmine.cli import export_plotdata, run
from scnmine.slicing import read_atoms


def _run(argv, capsys):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def merge_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("merge")
    assert run(["gen", "--template", "merge", "--seed", "1", "--out", str(d / "gen")]) == 0
    assert run(["slice", "--tracks", str(d / "gen" / "tracks.csv"), "--map", str(d / "gen" / "map.json"),
                "--out", str(d / "atoms.jsonl")]) == 0
    return d


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_gen_writes_files(merge_dir):
    names = sorted(p.name for p in (merge_dir / "gen").iterdir())
    assert names == ["map.json", "spec.json", "tracks.csv", "truth.json"]
    truth = json.loads((merge_dir / "gen" / "truth.json").read_text())
    assert truth["egos"] == ["R1"]


def test_slice_one_segment_per_line(merge_dir):
    lines = (merge_dir / "atoms.jsonl").read_text().splitlines()
    atoms = read_atoms(merge_dir / "atoms.jsonl", load_source=False)
    assert len(lines) == len(atoms) > 0
    assert all(json.loads(line)["scenario_id"] == a.scenario_id for line, a in zip(lines, atoms))


def test_dist_json(merge_dir, capsys):
    atoms = read_atoms(merge_dir / "atoms.jsonl", load_source=False)
    a, b = atoms[0].scenario_id, atoms[1].scenario_id
    code, out, _ = _run(["dist", "--atoms", merge_dir / "atoms.jsonl", "--a", a, "--b", b], capsys)
    assert code == 0
    d = json.loads(out)
    assert (d["a_id"], d["b_id"]) == (a, b) and d["normalized"] >= 0
    code, out, _ = _run(["dist", "--atoms", merge_dir / "atoms.jsonl", "--a", a, "--b", a], capsys)
    assert json.loads(out)["normalized"] == 0.0


def test_merge_pipeline_scatter_rows(merge_dir, capsys):
    d = merge_dir
    code, out, _ = _run(["matrix", "--atoms", d / "atoms.jsonl", "--type", "static_conflict_line",
                         "--out", d / "scl.csv"], capsys)
    assert code == 0
    n = json.loads(out)["n"]
    code, _, _ = _run(["label", "--matrix", d / "scl.csv", "--out", d / "report.json"], capsys)
    assert code == 0
    report = json.loads((d / "report.json").read_text())
    assert len(report["scenarios"]) == n
    code, _, _ = _run(["export", "--report", d / "report.json", "--atoms", d / "atoms.jsonl", "--out", d / "plots"],
                      capsys)
    assert code == 0
    assert len(_rows(d / "plots" / "scatter.csv")) - 1 == n


@pytest.fixture(scope="module")
def risk_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("risk")
    assert run(["gen", "--template", "risk", "--seed", "2", "--n-normal", "12", "--n-low-ttc", "1",
                "--n-right-of-way", "1", "--out", str(d / "gen")]) == 0
    assert run(["slice", "--tracks", str(d / "gen" / "tracks.csv"), "--map", str(d / "gen" / "map.json"),
                "--out", str(d / "atoms.jsonl")]) == 0
    assert run(["matrix", "--atoms", str(d / "atoms.jsonl"), "--type", "dynamic_conflict_line",
                "--out", str(d / "dcl.csv")]) == 0
    assert run(["label", "--matrix", str(d / "dcl.csv"), "--out", str(d / "report.json")]) == 0
    return d


def test_label_report_venn(risk_dir, capsys):
    report = json.loads((risk_dir / "report.json").read_text())
    ids = json.loads((risk_dir / "dcl.csv.meta.json").read_text())["ids"]
    assert [s["id"] for s in report["scenarios"]] == ids
    code, out, _ = _run(["venn", "--report", risk_dir / "report.json"], capsys)
    assert code == 0
    v = json.loads(out)
    flagged = sum(any(s["metric_flags"].values()) for s in report["scenarios"])
    assert sum(v["regions"].values()) == v["union"] == flagged
    assert v == {k: report["venn"][k] for k in v}


def test_planted_ego_segments_present(risk_dir):
    truth = json.loads((risk_dir / "gen" / "truth.json").read_text())
    atoms = read_atoms(risk_dir / "atoms.jsonl", load_source=False)
    egos = {a.ego_id for a in atoms if a.itype.snake == "dynamic_conflict_line"}
    assert set(truth["egos"]) <= {a.ego_id for a in atoms}
    assert len(truth["planted"]) == 2
    assert egos


def test_stats_command(risk_dir, capsys):
    code, out, _ = _run(["stats", "--atoms", risk_dir / "atoms.jsonl"], capsys)
    assert code == 0
    st = json.loads(out)
    assert st["searched"] >= st["interactive"] >= 0


def test_export_empty_report_headers_only(tmp_path):
    paths = export_plotdata(None, tmp_path / "x")
    assert len(paths) == 5
    for p in paths:
        rows = _rows(p)
        assert len(rows) == 1 and rows[0]


def test_export_three_segments(merge_case, tmp_path):
    atoms = merge_case[3][:3]
    assert len(atoms) == 3
    export_plotdata({"scenarios": []}, tmp_path, atoms)
    rows = _rows(tmp_path / "durations.csv")
    assert rows[0] == ["scenario_id", "ego_id", "itype", "duration_s", "interactive"]
    assert len(rows) == 4


def test_print_config(capsys, tmp_path):
    code, out, _ = _run(["--print-config"], capsys)
    assert code == 0 and json.loads(out)["dtw"]["window"] == 25
    c = tmp_path / "c.json"
    c.write_text('{"dtw": {"window": 7}}')
    code, out, _ = _run(["--config", c, "--print-config"], capsys)
    assert json.loads(out)["dtw"]["window"] == 7


@pytest.mark.parametrize("argv,code", [
    ([], 2),
    (["frobnicate"], 2),
    (["slice", "--tracks", "x.csv"], 2),
    (["slice", "--tracks", "missing.csv", "--map", "missing.json", "--out", "a.jsonl"], 1),
    (["label", "--matrix", "missing.csv"], 1),
    (["venn", "--report", "missing.json"], 1),
])
def test_exit_codes(argv, code, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    got, _, err = _run(argv, capsys)
    assert got == code
    doc = json.loads(err.strip().splitlines()[-1])
    assert set(doc) == {"error", "message"}


def test_bad_config_exit_1(tmp_path, capsys):
    c = tmp_path / "c.json"
    c.write_text('{"slice": {"nope": 1}}')
    code, _, err = _run(["--config", c, "--print-config"], capsys)
    assert code == 1 and json.loads(err)["error"] == "ConfigError"


def test_dist_unknown_id(merge_dir, capsys):
    code, _, err = _run(["dist", "--atoms", merge_dir / "atoms.jsonl", "--a", "999", "--b", "0"], capsys)
    assert code == 2 and json.loads(err)["error"] == "UsageError"
