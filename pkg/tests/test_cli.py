import csv
import json

import pytest

from sdpmetric.cli import ConfigError, bench_scaling, main

FAST = ["--max-outer", "8", "--max-inner", "8"]


def _train(tmp_path, *extra, out="run"):
    return main(["train", "--dataset", "builtin:wine", "--out", str(tmp_path / out), *FAST, *extra])


def test_train_writes_artifacts(tmp_path, capsys):
    assert _train(tmp_path, "--repeats", "2", "--C", "0.1") == 0
    run = tmp_path / "run"
    for s in (0, 1):
        assert (run / f"model_seed{s}.json").exists()
        assert (run / f"split_seed{s}.json").exists()
        trace = list(csv.reader((run / f"trace_seed{s}.csv").open()))
        assert trace[0] == ["step", "objective"] and len(trace) > 2
    rows = list(csv.DictReader((run / "train_summary.csv").open()))
    assert len(rows) == 2 and float(rows[0]["train_seconds"]) > 0
    model = json.loads((run / "model_seed0.json").read_text())
    assert model["dim"] == 13 and model["n_triplets"] == 1134 and "train_seconds" not in model
    assert "seed 1" in capsys.readouterr().out


def test_train_c_grid_selection(tmp_path):
    assert _train(tmp_path, "--c-grid", "0.01,1") == 0
    rows = list(csv.DictReader((tmp_path / "run" / "train_summary.csv").open()))
    assert float(rows[0]["C"]) in (0.01, 1.0)


def test_deterministic_models_identical(tmp_path):
    assert _train(tmp_path, "--C", "0.1", "--deterministic", out="a") == 0
    assert _train(tmp_path, "--C", "0.1", "--deterministic", out="b") == 0
    assert (tmp_path / "a/model_seed0.json").read_bytes() == (tmp_path / "b/model_seed0.json").read_bytes()


def test_zero_iterations_is_initialisation(tmp_path):
    assert main(["train", "--dataset", "builtin:wine", "--max-outer", "0", "--C", "1",
                 "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "model_seed0.json").read_text())
    assert all(abs(x - 1 / 13) < 1e-15 for x in m["matrix"])


def test_stall_exit_1(tmp_path, monkeypatch):
    import sdpmetric.solver as solver
    monkeypatch.setattr(solver, "_search_1d", lambda m, dm, rho, hp, f0=None: (0.0, f0))
    assert _train(tmp_path, "--C", "0.1") == 1
    rows = list(csv.DictReader((tmp_path / "run" / "train_summary.csv").open()))
    assert rows[0]["status"] == "stalled"


def test_missing_dataset_exit_2(tmp_path, capsys):
    assert main(["train", "--dataset", str(tmp_path / "nope.csv")]) == 2
    assert "nope.csv" in capsys.readouterr().err
    assert main(["train", "--dataset", "builtin:iris"]) == 2
    assert main(["train"]) == 2


def test_config_file_and_override(tmp_path):
    kv = tmp_path / "c.txt"
    kv.write_text("# protocol\ndataset = builtin:wine\nC = 0.1\nmax_outer = 4\nmax_inner = 4\n"
                  f"out = {tmp_path / 'kv'}\nrepeats = 1\n")
    assert main(["train", "--config", str(kv)]) == 0
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"dataset": "builtin:wine", "C": 0.1, "max_outer": 4, "max_inner": 4,
                              "out": str(tmp_path / "js")}))
    assert main(["train", "--config", str(js), "--seed", "3"]) == 0
    assert (tmp_path / "js" / "model_seed3.json").exists()
    assert json.loads((tmp_path / "kv/model_seed0.json").read_text())["C"] == 0.1


@pytest.mark.parametrize("text", ["{bad json", "dataset builtin:wine\n", "colour = red\n",
                                  "dataset = builtin:wine\nrepeats = 0\n"])
def test_bad_config_exit_2(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    assert main(["train", "--config", str(p)]) == 2


def test_csv_dataset_path(tmp_path):
    rows = [f"{i % 7},{(i * 3) % 5},{i % 2}" for i in range(40)]
    data = tmp_path / "toy.csv"
    data.write_text("\n".join(rows) + "\n")
    assert main(["train", "--dataset", str(data), "--C", "1", *FAST, "--out", str(tmp_path / "o")]) == 0


def test_eval_report(tmp_path, capsys):
    assert _train(tmp_path, "--repeats", "2", "--C", "0.1") == 0
    models = [str(tmp_path / f"run/model_seed{s}.json") for s in (0, 1)]
    rep = tmp_path / "rep.csv"
    assert main(["eval", "--dataset", "builtin:wine", *models, "--report", str(rep)]) == 0
    rows = list(csv.DictReader(rep.open()))
    assert [r["method"] for r in rows] == ["euclidean", "sdpmetric-squared_hinge"]
    assert float(rows[1]["train_seconds"]) > 0
    first = rep.read_bytes()
    assert main(["eval", "--dataset", "builtin:wine", *models, "--report", str(rep)]) == 0
    assert rep.read_bytes() == first


def test_eval_euclidean_without_models(tmp_path):
    rep = tmp_path / "e.csv"
    assert main(["eval", "--dataset", "builtin:wine", "--repeats", "3", "--report", str(rep)]) == 0
    rows = list(csv.DictReader(rep.open()))
    assert len(rows) == 1 and rows[0]["method"] == "euclidean"


def test_eval_dimension_mismatch(tmp_path, capsys):
    assert _train(tmp_path, "--C", "0.1") == 0
    rc = main(["eval", "--dataset", "builtin:balance", str(tmp_path / "run/model_seed0.json"),
               "--report", str(tmp_path / "x.csv")])
    err = capsys.readouterr().err
    assert rc == 2 and "13" in err and "4" in err


def test_gen_triplets(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["gen-triplets", "--dataset", "builtin:wine", "--triplets-out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["i", "j", "k"] and len(rows) == 1135


def test_bench_scaling_rows(tmp_path):
    rows = bench_scaling([20], 50, repeats=3, iterations=5)
    assert [r[0] for r in rows] == [20, 20, 20]
    out = tmp_path / "b.csv"
    assert main(["bench-scaling", "--dims", "10,20", "--n-triplets", "50", "--iterations", "3",
                 "--out", str(out)]) == 0
    header = next(csv.reader(out.open()))
    assert header[0] == "dimension" and "seconds_per_iteration" in header and "seconds_total" in header


def test_bench_scaling_zero_triplets():
    with pytest.raises(ConfigError):
        bench_scaling([20], 0)
    assert main(["bench-scaling", "--n-triplets", "0"]) == 2


def test_verify_and_fault(capsys):
    assert main(["verify", "--grid-resolution", "51"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") >= 7
    assert main(["verify", "--grid-resolution", "51", "--inject-fault", "huber-sign"]) == 3
    out = capsys.readouterr().out
    assert "FAIL  objective gradient" in out
