import json

import numpy as np
import pytest

from sympfold import CertificationFailed, NoDirectionFound, cantor_dust, point_set, segment
from sympfold import cli
from sympfold.cli import main

LOG23 = np.log(2) / np.log(3)


def write_set(path, s):
    path.write_text(json.dumps(s.to_dict()))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_help_and_unknown_command(capsys):
    assert run("--help") == 0
    assert run("teleport") == 2


def test_dim_and_verify(tmp_path):
    s = write_set(tmp_path / "dust.json", cantor_dust(LOG23, 1, 14))
    out = tmp_path / "dim.json"
    assert run("dim", "--set", s, "--scales", ",".join(str(3.0**-k) for k in range(1, 8)),
               "--out", out, "--figures", tmp_path / "fig") == 0
    rep = json.loads(out.read_text())
    assert rep["kind"] == "dimension"
    assert abs(rep["estimate"]["slope"] - LOG23) <= 0.05
    assert (tmp_path / "fig" / "dimension.svg").exists()
    assert run("verify", "--report", out, "--seed", 5, "--out", tmp_path / "v.json") == 0
    assert json.loads((tmp_path / "v.json").read_text())["passed"]


def test_insufficient_scales_exit_code(tmp_path):
    s = write_set(tmp_path / "seg.json", segment((0, 0), (1, 0)))
    assert run("dim", "--set", s, "--scales", "0.1,0.05", "--out", tmp_path / "d.json") == 3


def test_space_separated_negative_box_values():
    argv = cli._join_box_values(["fold", "--U", "-0.1,1.1", "--seed", "3"])
    assert argv == ["fold", "--U=-0.1,1.1", "--seed", "3"]


def test_input_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("dim", "--set", bad, "--out", tmp_path / "x.json") == 2
    assert run("dim", "--set", tmp_path / "missing.json", "--out", tmp_path / "x.json") == 2
    s = write_set(tmp_path / "seg.json", segment((0, 0), (1, 0)))
    assert run("fold", "--set", s, "--Q", "0,1,0,1", "--R", "0,1,0,0.4",
               "--out", tmp_path / "f.json") == 2
    assert run("fold", "--set", s, "--Q", "0,1,0", "--R", "0,1,0,1",
               "--out", tmp_path / "f.json") == 2


def test_displace_and_verify(tmp_path):
    s = write_set(tmp_path / "pts.json", point_set([(0.1, 0.2), (0.5, 0.5), (0.8, 0.1)]))
    out = tmp_path / "disp.json"
    assert run("displace", "--set-a", s, "--samples", 3, "--t-samples", 100, "--directions", 8,
               "--out", out, "--no-figures") == 0
    rep = json.loads(out.read_text())
    assert rep["certificates"] and all(c["passed"] for c in rep["certificates"])
    assert run("verify", "--report", out, "--out", tmp_path / "v.json") == 0


def test_no_direction_exit_code(tmp_path, monkeypatch):
    def refuse(*a, **k):
        raise NoDirectionFound("every direction collides")
    monkeypatch.setattr(cli, "find_generic_direction", refuse)
    s = write_set(tmp_path / "pts.json", point_set([(0.1, 0.2)]))
    assert run("displace", "--a", s, "--out", tmp_path / "d.json", "--no-figures") == 4


def test_certification_failure_exit_code(tmp_path, monkeypatch):
    def fail(*a, **k):
        raise CertificationFailed("injectivity", stage="squeeze final", check="injectivity")
    monkeypatch.setattr(cli, "squeeze", fail)
    s = write_set(tmp_path / "pts.json", point_set([(0.1, 0.2)]))
    t = tmp_path / "t.json"
    t.write_text(json.dumps([[0, 0.1, 0, 0.1]]))
    assert run("squeeze", "--set", s, "--targets", t, "--out", tmp_path / "s.json") == 5


@pytest.fixture(scope="module")
def fold_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("fold")
    s = write_set(d / "seg.json", segment((0.1, -0.6), (0.7, 0.8)))
    paths = []
    for k in range(2):
        out = d / f"fold{k}.json"
        code = run("fold", "--set", s, "--Q", "0,0.9,-1,1", "--R", "0,1.05,0,1",
                   "--cert-size", 5000, "--seed", 2, "--out", out, "--figures", d / f"fig{k}")
        assert code == 0
        paths.append(out)
    return d, paths


def test_fold_report(fold_run):
    _, (out, _) = fold_run
    rep = json.loads(out.read_text())
    assert rep["kind"] == "fold" and rep["passed"]
    assert set(rep["checks"]) == {"symplecticity", "glue", "containment", "injectivity",
                                  "displacement"}


def test_fold_is_byte_identical(fold_run):
    d, (a, b) = fold_run
    assert a.read_bytes() == b.read_bytes()
    assert (d / "fig0" / "fold.svg").read_bytes() == (d / "fig1" / "fold.svg").read_bytes()


def test_verify_fold_and_tampering(fold_run, tmp_path):
    _, (out, _) = fold_run
    assert run("verify", "--report", out, "--seed", 11, "--points", 5000,
               "--out", tmp_path / "v.json") == 0
    rep = json.loads(out.read_text())

    def flip(node):
        if isinstance(node, dict):
            if node.get("kind") == "shear":
                node["sign"] = -node["sign"]
            for v in node.values():
                flip(v)
        elif isinstance(node, list):
            for v in node:
                flip(v)
    flip(rep["map"])
    bad = tmp_path / "tampered.json"
    bad.write_text(json.dumps(rep))
    assert run("verify", "--report", bad, "--points", 5000, "--out", tmp_path / "v2.json") == 5
    assert not json.loads((tmp_path / "v2.json").read_text())["passed"]

