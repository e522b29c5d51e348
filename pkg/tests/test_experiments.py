import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppgnn.config import ExperimentConfig, SbmSpec, TrainConfig
from ppgnn.experiments import (
    MetricsRecord,
    atomic_write,
    homophily_table,
    homophily_trend,
    loglog_slope,
    run_benchmark,
    run_homophily,
    run_robustness,
    run_scaling,
    write_csv,
)
from ppgnn.graph import generate_sbm
from ppgnn.model import Model
from ppgnn.rng import make_rng

SMALL = dict(hidden=16, embed_hidden=16, embed_dim=8, max_epochs=15, patience=5)
TINY_SBM = SbmSpec(num_nodes=60, num_blocks=3, p_in=0.3, p_out=0.02, feat_dim=8, feat_noise=0.5, seed=3)


def tiny_config(tmp_path, model="gcn", runs=3, **train):
    return ExperimentConfig(train=TrainConfig(model=model, seed=11, **{**SMALL, **train}),
                            sbm=TINY_SBM, num_runs=runs, out=str(tmp_path))


# -- benchmark --------------------------------------------------------------


def test_metrics_json_mean_std_recompute(tmp_path):
    rec = run_benchmark(tiny_config(tmp_path))
    data = json.loads((tmp_path / "metrics.json").read_text())
    accs = data["test_acc"]
    assert data["num_runs"] == 3 and data["seeds"] == [11, 12, 13]
    mean = math.fsum(accs) / len(accs)
    std = math.sqrt(math.fsum((a - mean) ** 2 for a in accs) / len(accs))
    assert abs(data["mean"] - mean) <= 1e-12 and abs(data["std"] - std) <= 1e-12
    assert data["warning"] is False and rec.mean == data["mean"]


def test_single_run_reports_zero_std(tmp_path):
    rec = run_benchmark(tiny_config(tmp_path, runs=1))
    assert rec.std == 0.0
    assert json.loads((tmp_path / "metrics.json").read_text())["std"] == 0.0


def test_epochs_jsonl_holds_every_run(tmp_path):
    run_benchmark(tiny_config(tmp_path, runs=2))
    lines = [json.loads(x) for x in (tmp_path / "epochs.jsonl").read_text().splitlines()]
    assert {x["run"] for x in lines} == {0, 1}
    assert set(lines[0]) >= {"epoch", "l_pred", "l_graph", "train_acc", "val_acc", "wall_ms"}


def test_benchmark_rerun_is_idempotent(tmp_path):
    cfg = tiny_config(tmp_path, runs=2)
    run_benchmark(cfg)
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    run_benchmark(cfg)
    second = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    # wall_s differs between runs, everything else is byte-stable
    assert set(first) == set(second) == {"metrics.json", "epochs.jsonl", "config.json"}
    assert first["epochs.jsonl"] == second["epochs.jsonl"]
    assert first["config.json"] == second["config.json"]
    assert not any(p.name.endswith(".tmp") for p in tmp_path.iterdir())


def test_failed_runs_raise_warning_flag():
    rec = MetricsRecord("gcn", seeds=[0, 1], test_acc=[0.5], failed=[{"run": 1}])
    assert rec.warning and rec.mean == 0.5 and rec.to_dict()["warning"]


def test_atomic_write_replaces_without_leftovers(tmp_path):
    target = tmp_path / "sub" / "x.txt"
    atomic_write(target, "one")
    atomic_write(target, "two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["x.txt"]


def test_write_csv_blanks_missing_values(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b"], [{"a": 1, "b": None}])
    assert (tmp_path / "t.csv").read_text() == "a,b\n1,\n"


# -- robustness -------------------------------------------------------------


def test_ratio_zero_row_equals_clean_benchmark(tmp_path):
    cfg = tiny_config(tmp_path, runs=2)
    rows = run_robustness(cfg, [0.0, 0.5], modes=["add", "delete"])
    clean = run_benchmark(cfg, write=False)
    zero = [r for r in rows if r["ratio"] == 0.0]
    assert len(zero) == 2
    for r in zero:
        assert r["mean"] == clean.mean and r["std"] == clean.std
    with open(tmp_path / "robustness.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 4
    assert list(table[0]) == ["model", "mode", "ratio", "mean", "std", "runs"]


def test_full_deletion_still_runs_learned_graph(tmp_path):
    cfg = tiny_config(tmp_path, model="ppgnn", runs=1)
    rows = run_robustness(cfg, [1.0], modes=["delete"], write=False)
    assert rows[0]["runs"] == 1 and 0.0 <= rows[0]["mean"] <= 1.0


@pytest.mark.xfail(strict=True, reason="latent graph trails the feature-only baseline on noisy SBM; see decisions ledger")
def test_full_deletion_stays_within_two_points_of_mlp(tmp_path):
    cfg = ExperimentConfig(train=TrainConfig(model="mlp"), sbm=SbmSpec(feat_noise=1.0), num_runs=5, out=str(tmp_path))
    rows = run_robustness(cfg, [1.0], ["delete"], ["mlp", "ppgnn"], write=False)
    mean = {r["model"]: r["mean"] for r in rows}
    assert mean["ppgnn"] >= mean["mlp"] - 0.02, mean


# -- homophily --------------------------------------------------------------


def test_one_label_gives_unit_ratio_everywhere():
    rng = make_rng(0)
    scores = rng.random((12, 12))
    rows = homophily_table(scores, np.zeros(12, dtype=np.int64), np.arange(12), num_bins=5)
    assert sum(r["pairs"] for r in rows) == 12 * 11
    for r in rows:
        assert r["same_label_ratio"] == (1.0 if r["pairs"] else None)


def test_empty_bins_report_null():
    scores = np.full((4, 4), 0.95)
    rows = homophily_table(scores, np.array([0, 0, 1, 1]), np.arange(4), num_bins=10)
    assert [r["pairs"] for r in rows] == [0] * 9 + [12]
    assert all(r["same_label_ratio"] is None for r in rows[:9])
    assert rows[9]["same_label_ratio"] == pytest.approx(4 / 12, abs=1e-15)


def test_bin_edges_are_right_closed():
    scores = np.array([[1.0, 0.5], [0.1, 1.0]])
    rows = homophily_table(scores, np.array([0, 1]), np.arange(2), num_bins=10)
    assert rows[4]["pairs"] == 1 and rows[0]["pairs"] == 1 and rows[5]["pairs"] == 0


def test_pair_sampling_caps_count():
    scores = make_rng(1).random((50, 50))
    rows = homophily_table(scores, np.arange(50) % 2, np.arange(50), num_bins=4, max_pairs=500, seed=2)
    assert sum(r["pairs"] for r in rows) == 500


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=10))
def test_trend_of_increasing_ratios_is_one(values):
    rows = [{"bin": i, "same_label_ratio": v, "pairs": 1} for i, v in enumerate(sorted(set(values)))]
    expect = 1.0 if len(rows) > 1 else 0.0
    assert homophily_trend(rows) == pytest.approx(expect)


def test_trend_without_signal_is_zero():
    assert homophily_trend([{"bin": 0, "same_label_ratio": 0.5, "pairs": 3}]) == 0.0
    flat = [{"bin": i, "same_label_ratio": 0.5, "pairs": 3} for i in range(4)]
    assert homophily_trend(flat) == 0.0


def test_run_homophily_writes_csv_and_rejects_baselines(tmp_path):
    ds = generate_sbm(40, 2, 0.3, 0.05, 6, 0.5, seed=4)
    cfg = TrainConfig(model="ppgnn", **SMALL)
    rows = run_homophily(Model.for_dataset(ds, cfg, make_rng(0)), ds, 5, out=tmp_path)
    assert sum(r["pairs"] for r in rows) == ds.splits["test"].size * (ds.splits["test"].size - 1)
    assert (tmp_path / "homophily.csv").read_text().startswith("bin,lower,upper,same_label_ratio,pairs\n")
    gcn = Model.for_dataset(ds, TrainConfig(model="gcn", **SMALL), make_rng(0))
    with pytest.raises(ValueError):
        run_homophily(gcn, ds, 5)


# -- scaling ----------------------------------------------------------------


def test_single_size_gives_one_row_and_no_fit(tmp_path):
    rows = run_scaling([200], s=16, k=4, reps=1, out=tmp_path)
    assert len(rows) == 1 and rows[0]["num_nodes"] == 200
    assert rows[0]["node_node_ms"] > 0 and rows[0]["anchor_ms"] > 0
    assert loglog_slope([200], [rows[0]["anchor_ms"]]) is None
    assert (tmp_path / "scaling.csv").read_text().splitlines()[0] == "num_nodes,node_node_ms,anchor_ms"


def test_scaling_sizes_must_ascend():
    with pytest.raises(ValueError):
        run_scaling([400, 200], reps=1)


def test_loglog_slope_recovers_power_law_and_skips_oom():
    sizes = [1000, 2000, 4000, 8000]
    assert loglog_slope(sizes, [3 * n ** 2 for n in sizes]) == pytest.approx(2.0)
    assert loglog_slope(sizes, [5.0, 10.0, "OOM", "OOM"]) == pytest.approx(1.0)
