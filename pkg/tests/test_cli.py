import csv
import io
import json

import numpy as np
import pytest

from spikemult.cli import EXIT_DOMAIN, EXIT_IO, EXIT_OK, EXIT_USAGE, main, read_matrix
from spikemult.model import SpikeSpec, generate_isotropic


def run(argv):
    return main([str(a) for a in argv])


def split_histogram(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    blank = lines.index("")
    bins = list(csv.DictReader(io.StringIO("\n".join(lines[:blank]))))
    refs = {r["reference"]: float(r["value"]) for r in csv.DictReader(io.StringIO("\n".join(lines[blank + 1:])))}
    return bins, refs


@pytest.fixture
def sim_path(tmp_path):
    path = tmp_path / "x.bin"
    code = run(["simulate", "--alphas", "7,5,3", "--mults", "1,4,2", "--sigma2", 1.0,
                "--p", 500, "--n", 1000, "--seed", 4, "--out", path])
    assert code == EXIT_OK
    return path


def test_simulate_binary_layout_and_round_trip(tmp_path):
    path = tmp_path / "tiny.bin"
    code = run(["simulate", "--alphas", "3", "--mults", "1", "--sigma2", 1.0,
                "--p", 4, "--n", 2, "--seed", 9, "--out", path])
    assert code == EXIT_OK
    assert path.stat().st_size == 4 * 2 * 16
    x, meta = read_matrix(str(path))
    direct = generate_isotropic(SpikeSpec((3.0,), (1,), 1.0, 4, 2), seed=9).entries
    assert np.array_equal(x, direct)
    assert meta["p"] == 4 and meta["n"] == 2 and meta["seed"] == 9

    again = tmp_path / "again.bin"
    assert run(["simulate", "--config", f"{path}.json", "--out", again]) == EXIT_OK
    assert again.read_bytes() == path.read_bytes()


def test_simulate_doa_keeps_thetas(tmp_path):
    path = tmp_path / "doa.bin"
    assert run(["simulate", "--alphas", "5,2", "--mults", "1,2", "--sigma2", 0.5,
                "--p", 12, "--n", 24, "--model", "doa", "--out", path]) == EXIT_OK
    meta = json.loads((tmp_path / "doa.bin.json").read_text())
    assert len(meta["thetas"]) == 3
    again = tmp_path / "again.bin"
    assert run(["simulate", "--config", f"{path}.json", "--out", again]) == EXIT_OK
    assert again.read_bytes() == path.read_bytes()


def test_simulate_errors(tmp_path, capsys):
    assert run(["simulate", "--alphas", "3", "--mults", "1", "--sigma2", 1, "--p", 4, "--n", 2]) == EXIT_USAGE
    assert run(["simulate", "--alphas", "3,5", "--mults", "1,1", "--sigma2", 1,
                "--p", 4, "--n", 2, "--out", tmp_path / "a"]) == EXIT_USAGE
    assert run(["simulate", "--config", tmp_path / "missing.json", "--out", tmp_path / "b"]) == EXIT_IO
    assert run(["bogus"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err.lower()


@pytest.mark.slow
def test_estimate_recovers_structure(sim_path, tmp_path):
    out = tmp_path / "est.json"
    assert run(["estimate", "--data", sim_path, "--sigma2", 1.0, "--out", out]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["k_hat"] == 3
    assert rep["mults"] == [1, 4, 2]
    assert rep["gap_indices"] == [1, 5, 7]
    assert len(rep["log_marginals"]) == 4
    for got, want in zip(rep["alphas_hat"], (7, 5, 3)):
        assert abs(got - want) < 0.1 * want
    assert rep["config"]["j_max"] == 125


@pytest.mark.slow
def test_estimate_single_candidate_and_determinism(sim_path, tmp_path):
    out = tmp_path / "k1.json"
    assert run(["estimate", "--data", sim_path, "--sigma2", 1.0, "--k-max", 1, "--out", out]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["k_hat"] == 1 and len(rep["log_marginals"]) == 1

    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert run(["estimate", "--data", sim_path, "--sigma2", 1.0, "--no-timestamp", "--out", path]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert "timestamp" not in json.loads(a.read_text())


def test_estimate_from_inline_spectrum(capsys):
    lam = [6.6] + [0.5] * 19
    assert run(["estimate", "--eigenvalues", ",".join(map(str, lam)), "--n", 40,
                "--sigma2", 1.0, "--prior", "5", "--no-timestamp"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["k_hat"] == 1 and rep["mults"] == [1]
    assert rep["alphas_hat"][0] == pytest.approx(5.0, rel=1e-10)


def test_estimate_exit_codes(tmp_path, capsys):
    lam = "6.6,4.0,0.5,0.4,0.3,0.2,0.1,0.05"
    assert run(["estimate", "--eigenvalues", "6.6,abc", "--n", 10, "--sigma2", 1]) == EXIT_USAGE
    assert run(["estimate", "--eigenvalues", lam, "--sigma2", 1]) == EXIT_USAGE
    assert run(["estimate", "--spectrum", tmp_path / "nope.txt", "--n", 10, "--sigma2", 1]) == EXIT_IO
    capsys.readouterr()
    assert run(["estimate", "--eigenvalues", lam, "--n", 16, "--sigma2", -1]) == EXIT_DOMAIN
    assert "sigma2" in capsys.readouterr().err
    assert run(["estimate", "--eigenvalues", lam, "--n", 16, "--sigma2", 1, "--k-max", 9]) == EXIT_DOMAIN


def test_experiment_bundled_table1_shape(tmp_path):
    prefix = tmp_path / "t1"
    assert run(["experiment", "--config", "table1.cfg", "--trials", 1, "--no-timestamp", "--out", prefix]) == EXIT_OK
    text = (tmp_path / "t1.csv").read_text()
    assert text.startswith("# config: ")
    rows = list(csv.DictReader(io.StringIO("\n".join(text.splitlines()[1:]))))
    assert len(rows) == 20
    assert rows[0]["sigma2_db"] == "-50.0" and rows[-1]["sigma2_db"] == "1.46"
    assert all(r["trials"] == "1" and float(r["prob_correct"]) in (0.0, 1.0) for r in rows)
    doc = json.loads((tmp_path / "t1.json").read_text())
    assert doc["config"]["trials"] == 1 and len(doc["rows"]) == 20


def test_experiment_bundled_fig2_shape(capsys):
    assert run(["experiment", "--config", "fig2.cfg", "--trials", 1, "--no-timestamp", "--no-provenance"]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [(r["model"], r["p"]) for r in rows] == [
        (m, str(p)) for m in "ABC" for p in (200, 400, 800)
    ]


def test_experiment_json_format_and_errors(tmp_path, capsys):
    cfg = tmp_path / "e.cfg"
    cfg.write_text(json.dumps({"experiment": "sweep_sigma2", "mults": [1, 2], "p": 40, "n": 80,
                               "sigma2_db": [-10.0], "trials": 2}))
    assert run(["experiment", "--config", cfg, "--format", "json", "--no-timestamp"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["rows"][0]["trials"] == 2
    cfg.write_text(json.dumps({"experiment": "sweep_sigma2", "mults": [1, 2], "p": 40, "n": 80}))
    assert run(["experiment", "--config", cfg]) == EXIT_USAGE
    cfg.write_text("{not json")
    assert run(["experiment", "--config", cfg]) == EXIT_USAGE
    assert run(["experiment", "--config", tmp_path / "none.cfg"]) == EXIT_IO


def test_histogram_counts(tmp_path):
    out = tmp_path / "h1.csv"
    assert run(["histogram", "--alphas", "5", "--mults", "1", "--sigma2", 1, "--p", 30, "--n", 60,
                "--bins", 1, "--out", out]) == EXIT_OK
    bins, refs = split_histogram(out.read_text())
    assert len(bins) == 1 and int(bins[0]["count"]) == 30
    assert refs["phi_alpha_1"] == pytest.approx(5 + 1 + 0.5 * 1.2)

    out = tmp_path / "h50.csv"
    assert run(["histogram", "--alphas", "5", "--mults", "1", "--sigma2", 1, "--p", 30, "--n", 60,
                "--bins", 50, "--out", out]) == EXIT_OK
    bins, _ = split_histogram(out.read_text())
    assert len(bins) == 50 and sum(int(b["count"]) for b in bins) == 30


def test_histogram_from_data_file(sim_path, tmp_path):
    out = tmp_path / "h.csv"
    assert run(["histogram", "--data", sim_path, "--bins", 100, "--out", out]) == EXIT_OK
    bins, refs = split_histogram(out.read_text())
    assert sum(int(b["count"]) for b in bins) == 500
    assert refs["mp_upper"] == pytest.approx(2.9142, abs=1e-4)


@pytest.mark.slow
def test_histogram_fig1_outliers_separated(tmp_path):
    out = tmp_path / "fig1.csv"
    assert run(["histogram", "--alphas", "7,5,3", "--mults", "1,4,2", "--sigma2", 1,
                "--p", 2000, "--n", 4000, "--seed", 1, "--bins", 200, "--out", out]) == EXIT_OK
    bins, refs = split_histogram(out.read_text())
    above = [b for b in bins if float(b["bin_left"]) >= 3.2]
    assert sum(int(b["count"]) for b in above) == 7
    assert refs["mp_upper"] < 3.2 < refs["phi_alpha_3"]
