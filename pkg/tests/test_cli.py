import csv
import io
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from distsgd.cli import main
from distsgd.config import load_config, parse_config, render_config
from distsgd.dataio import Dataset, write_libsvm
from distsgd.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
MINIMAL = CONFIGS / "minimal.ini"


def small_default(tmp_path, rounds=30, trials=2):
    text = (CONFIGS / "synthetic_default.ini").read_text()
    text = text.replace("rounds = 2000", f"rounds = {rounds}").replace("trials = 100", f"trials = {trials}")
    p = tmp_path / "default.ini"
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_graph_star3(capsys):
    assert main(["graph", "star", "3", "--validate"]) == 0
    out = capsys.readouterr().out.splitlines()
    rows = np.array([[float(v) for v in line.split(",")] for line in out[:3]])
    np.testing.assert_allclose(rows, [[1 / 3, 1 / 3, 1 / 3], [1 / 3, 2 / 3, 0], [1 / 3, 0, 2 / 3]], atol=1e-15)
    assert float(out[3].split("=")[1]) == pytest.approx(2 / 3, abs=1e-10)
    assert out[4].startswith("valid")


def test_graph_complete_uniform_sigma_zero(capsys, tmp_path):
    assert main(["graph", "complete", "5", "--uniform", "--csv", str(tmp_path / "h.csv")]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "sigma = 0"
    np.testing.assert_allclose(np.loadtxt(tmp_path / "h.csv", delimiter=","), 0.2, atol=1e-16)


def test_graph_single_node_is_usage_error(capsys):
    assert main(["graph", "circle", "1"]) == 2
    assert "n >= 2" in capsys.readouterr().err


def test_graph_random_connected(capsys):
    assert main(["graph", "random", "12", "--edge-prob", "0.4", "--seed", "5", "--validate"]) == 0


def test_run_minimal(tmp_path):
    out = tmp_path / "a"
    assert main(["run", str(MINIMAL), str(out)]) == 0
    rows = read_csv(out / "trajectory.csv")
    assert len(rows) == 10
    assert [r["t"] for r in rows] == [str(t) for t in range(1, 11)]
    assert set(rows[0]) == {"t", "nce_mean", "nce_var", "msd_mean", "msd_var", "regret_mean", "regret_var", "g_max"}
    assert (out / "manifest.txt").exists()


def test_run_is_byte_identical(tmp_path):
    main(["run", str(MINIMAL), str(tmp_path / "a")])
    main(["run", str(MINIMAL), str(tmp_path / "b"), "--threads", "2"])
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_manifest_reproduces_run(tmp_path):
    main(["run", str(MINIMAL), str(tmp_path / "a"), "--check-bounds"])
    assert main(["run", str(tmp_path / "a" / "manifest.txt"), str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_check_bounds_writes_reports(tmp_path, capsys):
    assert main(["run", str(MINIMAL), str(tmp_path), "--check-bounds"]) == 0
    for name in ("bounds_t1.csv", "bounds_t2.csv"):
        rows = read_csv(tmp_path / name)
        assert len(rows) == 10
        assert all(float(r["empirical"]) <= float(r["bound"]) for r in rows)
    assert "t1: OK" in capsys.readouterr().out


def test_unknown_algorithm_names_the_key(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[experiment]\nrounds = 5\n\n[algorithm.sgdx]\n")
    assert main(["run", str(cfg), str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "algorithm.sgdx" in err and "unknown algorithm" in err


@pytest.mark.parametrize("text,key", [
    ("[experiment]\nrounds = many\n[algorithm.tvw]\n", "experiment.rounds"),
    ("[experiment]\ncolour = red\n[algorithm.tvw]\n", "experiment.colour"),
    ("[experiment]\n[loss]\nfamily = logistic\n[algorithm.tvw]\n", "loss"),
    ("[experiment]\n[algorithm.tvw]\nrounds = 3\n", "algorithm.tvw.rounds"),
    ("[experiment]\n[algorithm.c]\nkind = css\n", "algorithm.c.step_size"),
    ("[experiment]\n[algorithm.c]\nkind = css\nstep_size = -1\n", "algorithm.c.step_size"),
    ("[experiment]\n[algorithm.c]\nkind = sgd\n", "algorithm.c.kind"),
    ("[experiment]\ntopology = torus\n[algorithm.tvw]\n", "experiment.topology"),
    ("[experiment]\n", "algorithm"),
    ("[experiment]\n[data]\nsource = dataset\n[algorithm.tvw]\n", "data.path"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key


def test_missing_config_file_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.ini"), str(tmp_path / "out")]) == 2


def test_run_rejects_multi_algorithm_config(tmp_path):
    assert main(["run", str(small_default(tmp_path)), str(tmp_path / "out")]) == 2


def test_lambda_one_over_t():
    rc = parse_config("[experiment]\nrounds = 400\n[loss]\nlambda = 1/T\n[algorithm.tvw]\n")
    assert rc.experiments[0].loss.lam == 1 / 400


def test_render_round_trips():
    rc = load_config(CONFIGS / "synthetic_default.ini")
    assert parse_config(render_config(rc)) == rc
    assert rc.labels == ["tvw", "uw", "vss", "css1", "css2", "css3"]


def test_compare_default(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", str(small_default(tmp_path)), str(out)]) == 0
    labels = ["tvw", "uw", "vss", "css1", "css2", "css3"]
    for label in labels:
        assert len(read_csv(out / f"trajectory_{label}.csv")) == 30
    merged = read_csv(out / "merged.csv")
    assert len(merged) == 30
    assert list(merged[0]) == ["t"] + [f"{lab}_{k}_mean" for lab in labels for k in ("nce", "msd", "regret")]
    tvw = read_csv(out / "trajectory_tvw.csv")
    assert [r["msd_mean"] for r in tvw] == [r["tvw_msd_mean"] for r in merged]


def test_compare_identical_specs_give_identical_columns(tmp_path):
    cfg = tmp_path / "same.ini"
    cfg.write_text("[experiment]\nn_nodes = 5\nrounds = 20\ntrials = 3\n\n"
                   "[algorithm.a]\nkind = vss\n\n[algorithm.b]\nkind = vss\n")
    assert main(["compare", str(cfg), str(tmp_path / "o")]) == 0
    merged = read_csv(tmp_path / "o" / "merged.csv")
    for k in ("nce", "msd", "regret"):
        assert [r[f"a_{k}_mean"] for r in merged] == [r[f"b_{k}_mean"] for r in merged]


def test_threads_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("DISTSGD_THREADS", "3")
    assert main(["run", str(MINIMAL), str(tmp_path / "a")]) == 0
    assert "threads = 3" in (tmp_path / "a" / "manifest.txt").read_text()
    monkeypatch.setenv("DISTSGD_THREADS", "lots")
    assert main(["run", str(MINIMAL), str(tmp_path / "b")]) == 2


def test_bounds_command(capsys):
    assert main(["bounds", "--n", "20", "--lam", "0.01", "--g", "1", "-T", "999", "--sigma", "0.9"]) == 0
    out = capsys.readouterr().out
    t1 = float(out.splitlines()[1].split("<=")[1])
    assert t1 == pytest.approx(24 + 576 * np.sqrt(20), rel=1e-12)


def test_bounds_command_from_topology(capsys):
    assert main(["bounds", "--n", "3", "--lam", "1", "--g", "1", "-T", "10", "--topology", "star"]) == 0
    assert float(capsys.readouterr().out.splitlines()[0].split("=")[1]) == pytest.approx(2 / 3, abs=1e-10)
    assert main(["bounds", "--n", "3", "--lam", "1", "--g", "1", "-T", "10"]) == 2


def test_dataset_info(tmp_path, capsys):
    p = tmp_path / "d.txt"
    p.write_text("1 1:0.5\n2 3:1\n2 2:1\n")
    assert main(["dataset-info", str(p)]) == 0
    out = capsys.readouterr().out
    assert "samples = 3" in out and "dim = 3" in out and "labels +1/-1 = 2/1" in out


def test_dataset_info_parse_error(tmp_path, capsys):
    p = tmp_path / "d.txt"
    p.write_text("1 1:0.5\n2 3:x\n")
    assert main(["dataset-info", str(p)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_dataset_run(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(300, 4))
    write_libsvm(Dataset(x, np.sign(x @ np.array([1.0, -2.0, 0.5, 0.0]) + 1e-12)), tmp_path / "d.txt")
    cfg = tmp_path / "ds.ini"
    cfg.write_text("[experiment]\nn_nodes = 5\nrounds = 100\ntrials = 2\ntopology = random\n\n"
                   "[loss]\nfamily = squared_hinge\nlambda = 1/T\n\n"
                   "[data]\nsource = dataset\npath = d.txt\nreference_iters = 2000\n\n[algorithm.tvw]\n")
    assert main(["run", str(cfg), str(tmp_path / "o"), "--check-bounds"]) == 0
    rows = read_csv(tmp_path / "o" / "trajectory.csv")
    assert len(rows) == 100
    manifest = (tmp_path / "o" / "manifest.txt").read_text()
    assert "dataset_sha256 = " in manifest
    # regret is evaluated every rounds // 100 = 1 round here
    assert all(np.isfinite(float(r["regret_mean"])) for r in rows)


def test_csv_output_reparses(tmp_path):
    main(["run", str(MINIMAL), str(tmp_path)])
    text = (tmp_path / "trajectory.csv").read_text()
    data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1)
    assert data.shape == (10, 8)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "distsgd", "graph", "star", "3"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[-1].startswith("sigma = 0.6666")
