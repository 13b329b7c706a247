import json

import numpy as np
import pytest

from recformer.cli import main
from recformer.data import load_dataset, load_mask, save_dataset, synth_dataset

FAST = ["--e1", "2", "--e2", "2", "--batch-size", "10", "--d-e", "16", "--mlp-hidden", "16",
        "--k-neighbors", "3", "--kmeans-restarts", "2"]
SWEEP_FAST = FAST[:10] + FAST[12:]


@pytest.fixture
def data_dir(tmp_path):
    d = tmp_path / "data"
    assert main(["synth", "--out", str(d), "--n", "30", "--dims", "5,7", "--seed", "1",
                 "--paired-rate", "0.5"]) == 0
    return d


@pytest.fixture
def run_dir(tmp_path, data_dir):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out", str(out)] + FAST) == 0
    return out


def test_synth_writes_loadable_dir(data_dir):
    ds = load_dataset(data_dir)
    assert (ds.n, ds.m, ds.dims, ds.c) == (30, 2, [5, 7], 3)
    assert load_mask(data_dir / "mask.csv").shape == (30, 2)


def test_simulate_rate(tmp_path, capsys):
    d = tmp_path / "hw"
    save_dataset(synth_dataset(2000, 2, 10, [6, 4], seed=0), d)
    out = tmp_path / "mask.csv"
    assert main(["simulate", "--data", str(d), "--rate", "0.5", "--seed", "3", "--out", str(out)]) == 0
    w = load_mask(out)
    assert ((w == 0).sum(axis=0) == 1000).all()
    assert "1000 missing" in capsys.readouterr().out


def test_simulate_zero_rate_and_determinism(tmp_path, data_dir):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--data", str(data_dir), "--rate", "0", "--out", str(a)]) == 0
    assert (load_mask(a) == 1).all()
    for p in (a, b):
        main(["simulate", "--data", str(data_dir), "--rate", "0.3", "--seed", "9", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_simulate_paired_needs_two_views(tmp_path):
    d = tmp_path / "three"
    save_dataset(synth_dataset(12, 3, 2, [2, 2, 2], seed=0), d)
    assert main(["simulate", "--data", str(d), "--paired-rate", "0.5", "--out",
                 str(tmp_path / "m.csv")]) == 2


def test_train_run_layout(run_dir):
    names = {p.name for p in run_dir.iterdir()}
    assert {"config.json", "losses.csv", "checkpoint.npz", "recovered_view_1.csv",
            "recovered_view_2.csv", "embeddings.csv", "predictions.csv", "metrics.json",
            "graphs.csv", "mask.csv", "scaling.npz"} <= names
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert {"acc", "nmi", "purity", "inertia", "seed"} <= set(metrics)


def test_train_default_config_echo(tmp_path, data_dir):
    out = tmp_path / "r"
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"e1": 1, "e2": 1, "d_e": 8, "heads": 4, "mlp_hidden": 8}))
    assert main(["train", "--data", str(data_dir), "--config", str(cfg_file), "--out", str(out),
                 "--e2", "2"]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["lr"] == 0.001 and cfg["heads"] == 4 and cfg["layers"] == 1
    assert cfg["batch_size"] == 128 and cfg["e1"] == 1 and cfg["e2"] == 2


def test_defaults_match_reported_settings():
    from recformer.model import ModelConfig
    from recformer.training import TrainConfig
    t, m = TrainConfig(), ModelConfig(dims=[1])
    assert (t.lr, t.e1, t.e2, t.batch_size, m.heads, m.layers) == (0.001, 50, 50, 128, 4, 1)


def test_train_missing_mask_exit_2(tmp_path, data_dir, capsys):
    missing = tmp_path / "nope.csv"
    rc = main(["train", "--data", str(data_dir), "--mask", str(missing), "--out", str(tmp_path / "r")])
    assert rc == 2
    assert str(missing) in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_numeric_failure_exit_3(tmp_path, data_dir):
    rc = main(["train", "--data", str(data_dir), "--out", str(tmp_path / "r"), "--lr", "1e300"]
              + FAST)
    assert rc == 3


def test_eval_cases(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("0\n1\n1\n0\n")
    assert main(["eval", "--pred", str(a), "--labels", str(a)]) == 0
    assert json.loads(capsys.readouterr().out) == {"acc": 1.0, "nmi": 1.0, "purity": 1.0}
    b.write_text("0\n0\n0\n0\n")
    main(["eval", "--pred", str(b), "--labels", str(a)])
    assert json.loads(capsys.readouterr().out)["acc"] == 0.5


def test_eval_known_contingency(tmp_path, capsys):
    # table [[2, 1], [0, 3]]: acc = purity = 5/6
    pred, true = tmp_path / "p.csv", tmp_path / "t.csv"
    pred.write_text("0\n0\n0\n1\n1\n1\n")
    true.write_text("0\n0\n1\n1\n1\n1\n")
    main(["eval", "--pred", str(pred), "--labels", str(true)])
    out = json.loads(capsys.readouterr().out)
    p = np.array([[2, 1], [0, 3]]) / 6
    mi = sum(p[i, j] * np.log(p[i, j] / (p[i].sum() * p[:, j].sum()))
             for i in range(2) for j in range(2) if p[i, j] > 0)
    hp = -sum(x * np.log(x) for x in p.sum(axis=1))
    ht = -sum(x * np.log(x) for x in p.sum(axis=0))
    assert out["acc"] == pytest.approx(5 / 6) and out["purity"] == pytest.approx(5 / 6)
    assert out["nmi"] == pytest.approx(mi / np.sqrt(hp * ht), rel=1e-12)


def test_eval_length_mismatch(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("0\n1\n")
    b.write_text("0\n1\n1\n")
    assert main(["eval", "--pred", str(a), "--labels", str(b)]) == 2


def test_export_recovered_inverse_scaling(run_dir, data_dir):
    assert main(["export", "--run", str(run_dir), "--what", "recovered"]) == 0
    ds = load_dataset(data_dir)
    w = load_mask(data_dir / "mask.csv")
    for v in range(2):
        rec = np.loadtxt(run_dir / "export" / f"recovered_view_{v + 1}.csv", delimiter=",")
        assert rec.shape == (ds.n, ds.dims[v])
        avail = w[:, v] == 1
        np.testing.assert_allclose(rec[avail], ds.views[v][avail], atol=1e-9, rtol=0)


def test_export_losses_graph_embeddings(run_dir):
    for what in ("losses", "graph", "embeddings"):
        assert main(["export", "--run", str(run_dir), "--what", what]) == 0
    lines = (run_dir / "export" / "losses.csv").read_text().splitlines()
    assert len(lines) - 1 == 2 + 2
    assert np.loadtxt(run_dir / "export" / "embeddings.csv", delimiter=",").shape == (30, 16)
    assert (run_dir / "export" / "graph.csv").read_text().startswith("view,i,j")


def test_export_unknown_artifact(run_dir):
    assert main(["export", "--run", str(run_dir), "--what", "pictures"]) == 2


def test_sweep_grid(tmp_path, data_dir, run_dir):
    out = tmp_path / "sweep"
    assert main(["sweep", "--data", str(data_dir), "--beta", "1,0.5", "--k", "3,4", "--out", str(out)]
                + SWEEP_FAST) == 0
    rows = (out / "summary.csv").read_text().splitlines()
    assert len(rows) == 1 + 4
    # the first cell uses the base seed and the same settings as the plain train run
    cell = out / "beta=1_k=3"
    assert (cell / "predictions.csv").read_bytes() == (run_dir / "predictions.csv").read_bytes()
    assert (cell / "losses.csv").read_bytes() == (run_dir / "losses.csv").read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweep_records_failed_cell(tmp_path, data_dir):
    out = tmp_path / "sweep"
    assert main(["sweep", "--data", str(data_dir), "--beta", "1", "--k", "3", "--out", str(out),
                 "--lr", "1e300"] + SWEEP_FAST) == 0
    assert "failed" in (out / "summary.csv").read_text()
