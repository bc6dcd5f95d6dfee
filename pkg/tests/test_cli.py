import csv
import json

import pytest

from classex import cli
from classex.basis import QuadratureError
from classex.ranks import write_score_file
from classex.simulator import ToyModel, simulate_toy_task


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(l for l in fh if not l.startswith("#")))


@pytest.fixture
def fixture_scores(tmp_path, three_class):
    p = tmp_path / "three.csv"
    write_score_file(p, three_class)
    return p


@pytest.fixture
def toy_scores(tmp_path):
    p = tmp_path / "toy.csv"
    write_score_file(p, simulate_toy_task(ToyModel(0.7), 10, 4, seed=0))
    return p


def test_ata_fixture(tmp_path, fixture_scores):
    assert cli.main(["ata", "--scores", str(fixture_scores), "--out-dir", str(tmp_path / "o")]) == 0
    got = {int(r["k"]): float(r["accuracy"]) for r in rows(tmp_path / "o" / "ata.csv")}
    assert got == pytest.approx({2: 0.5, 3: 1 / 3}, abs=1e-12)
    head = (tmp_path / "o" / "ata.csv").read_text().splitlines()
    assert head[0].startswith("# classex ")
    assert any(l.startswith("# config_sha256=") for l in head)
    assert any(l == "# seed=0" for l in head)


def test_ata_single_k(tmp_path, fixture_scores):
    assert cli.main(["ata", "--scores", str(fixture_scores), "--ks", "2", "--out-dir", str(tmp_path)]) == 0
    assert [r["k"] for r in rows(tmp_path / "ata.csv")] == ["2"]


def test_ata_from_rank_file(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("true_class,obs,rank\n1,1,3\n2,1,2\n3,1,1\n")
    assert cli.main(["ata", "--ranks", str(p), "--out-dir", str(tmp_path)]) == 0
    assert float(rows(tmp_path / "ata.csv")[0]["accuracy"]) == pytest.approx(0.5)


def test_missing_file(tmp_path, capsys):
    missing = tmp_path / "absent.csv"
    assert cli.main(["ata", "--scores", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_extrapolate_smoke_and_repeat(tmp_path, toy_scores):
    args = ["extrapolate", "--scores", str(toy_scores), "--k2", "20,50", "--resamples", "5", "--seed", "4"]
    assert cli.main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("predictions.csv", "fit.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    preds = rows(tmp_path / "a" / "predictions.csv")
    assert [r["provenance"] for r in preds][-2:] == ["extrapolated", "extrapolated"]
    doc = json.loads((tmp_path / "a" / "fit.json").read_text())
    assert list(doc)[0] == "header" and doc["header"]["seed"] == 4
    assert len(doc["fit"]["beta"]) == doc["fit"]["basis"]["m"]


def test_extrapolate_bad_k2(tmp_path, toy_scores, capsys):
    assert cli.main(["extrapolate", "--scores", str(toy_scores), "--k2", "1", "--out-dir", str(tmp_path)]) == 2
    assert "k2" in capsys.readouterr().err


def test_kde_command(tmp_path, toy_scores):
    assert cli.main(["kde", "--scores", str(toy_scores), "--k2", "20", "--rule", "bcv",
                     "--out-dir", str(tmp_path)]) == 0
    r = rows(tmp_path / "kde.csv")
    assert r[0]["provenance"] == "kde-bcv" and 0 < float(r[0]["accuracy"]) < 1


def test_config_file_and_override(tmp_path, toy_scores):
    conf = tmp_path / "run.conf"
    conf.write_text(f"# comment\nscores = {toy_scores}\nk2 = 30\nrule = ucv\nseed = 5\n")
    assert cli.main(["kde", "--config", str(conf), "--rule", "bcv", "--out-dir", str(tmp_path)]) == 0
    text = (tmp_path / "kde.csv").read_text()
    assert "kde-bcv" in text and "# seed=5" in text


def test_simulate_command(tmp_path):
    conf = tmp_path / "study.conf"
    conf.write_text("k1 = 20\nk2 = 40\nsigmas = 0.4,0.8\nreplicates = 2\nh_grid = 0.5,1.0\n"
                    "resamples = 3\nbootstrap = 20\nmethods = classexreg,kde-ucv\n")
    assert cli.main(["simulate", "--config", str(conf), "--out-dir", str(tmp_path / "o")]) == 0
    assert len(rows(tmp_path / "o" / "study.csv")) == 2 * 2 * 2
    summ = rows(tmp_path / "o" / "summary.csv")
    assert [s["method"] for s in summ] == ["classexreg", "kde-ucv"]


def test_simulate_missing_keys(tmp_path):
    assert cli.main(["simulate", "--k1", "10", "--out-dir", str(tmp_path)]) == 2


def test_moments_command(tmp_path):
    assert cli.main(["moments", "--basis", "radial", "--h-grid", "0.5,1.0", "--k1", "20", "--ks", "2-5",
                     "--out-dir", str(tmp_path)]) == 0
    r = rows(tmp_path / "moments_h0.5.csv")
    assert {int(x["k"]) for x in r} == {2, 3, 4, 5}
    assert all(float(x["H"]) == pytest.approx(1.0) for x in r if x["ell"] == "1")


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise QuadratureError("did not converge")
    monkeypatch.setattr(cli, "moments", boom)
    assert cli.main(["moments", "--basis", "monomial", "--ks", "2", "--out-dir", str(tmp_path)]) == 1


def test_hash_ignores_threads_and_out_dir():
    base = {"command": "ata", "seed": 0, "scores": "x.csv", "tie_eps": 1e-9}
    a = cli.header_lines({**base, "threads": 1, "out_dir": "a"})
    b = cli.header_lines({**base, "threads": 8, "out_dir": "b"})
    c = cli.header_lines({**base, "seed": 1, "threads": 1, "out_dir": "a"})
    assert a == b and a != c


@pytest.mark.parametrize("text,want", [("2-5", [2, 3, 4, 5]), ("2,10,100", [2, 10, 100]), ("2-3,9", [2, 3, 9])])
def test_int_lists(text, want):
    assert cli.parse_int_list(text) == want
