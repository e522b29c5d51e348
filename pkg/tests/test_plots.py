from pathlib import Path

import matplotlib.pyplot as plt
import pytest

import ppgnn.plots as plots
from ppgnn.plots import TableError, export_plots, plot_homophily, plot_robustness, plot_scaling

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "robustness_fixture.csv"


@pytest.fixture
def captured(monkeypatch):
    figs = []

    def keep(fig, path):
        figs.append(fig)

    monkeypatch.setattr(plots, "_save", keep)
    yield figs
    for fig in figs:
        plt.close(fig)


def test_golden_file_bytes(tmp_path):
    plot_robustness(FIXTURE, tmp_path / "r.svg")
    assert (tmp_path / "r.svg").read_bytes() == (DATA / "robustness_golden.svg").read_bytes()


def test_output_is_deterministic(tmp_path):
    for name in ("a", "b"):
        plot_robustness(FIXTURE, tmp_path / f"{name}.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert b"<dc:date>" not in (tmp_path / "a.svg").read_bytes()


def test_one_bar_group_per_ratio(captured):
    plot_robustness(FIXTURE, "unused.svg")
    add, delete = captured[0].axes
    assert [t.get_text() for t in add.get_xticklabels()] == ["0%", "25%", "50%"]
    assert [t.get_text() for t in delete.get_xticklabels()] == ["0%", "50%"]
    # two models per group
    assert len(add.patches) == 6 and len(delete.patches) == 4
    groups = sorted(int(p.get_x() + 0.5) for p in add.patches if p.get_height() > 0)
    assert groups == [0, 0, 1, 1, 2, 2]


@pytest.mark.parametrize("plotter, header", [
    (plot_robustness, "model,mode,ratio,mean,std,runs\n"),
    (plot_homophily, "bin,lower,upper,same_label_ratio,pairs\n"),
    (plot_scaling, "num_nodes,node_node_ms,anchor_ms\n"),
])
def test_empty_table_gives_empty_axes(tmp_path, plotter, header):
    (tmp_path / "t.csv").write_text(header)
    plotter(tmp_path / "t.csv", tmp_path / "t.svg")
    assert (tmp_path / "t.svg").read_text().lstrip().startswith("<?xml")


def test_empty_file_is_accepted(tmp_path, captured):
    (tmp_path / "t.csv").write_text("")
    plot_robustness(tmp_path / "t.csv", "unused.svg")
    assert all(not ax.patches for ax in captured[0].axes)


def test_malformed_tables_are_rejected(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("model,mode,ratio\ngcn,add,0.5\n")
    with pytest.raises(TableError, match="missing columns"):
        plot_robustness(bad, tmp_path / "o.svg")
    bad.write_text("model,mode,ratio,mean,std,runs\ngcn,add,half,0.5,0.1,5\n")
    with pytest.raises(TableError, match=":2:"):
        plot_robustness(bad, tmp_path / "o.svg")
    bad.write_text("num_nodes,node_node_ms,anchor_ms\n100,1.0\n")
    with pytest.raises(TableError, match="wrong number of fields"):
        plot_scaling(bad, tmp_path / "o.svg")
    assert not (tmp_path / "o.svg").exists()


def test_scaling_skips_oom_cells(tmp_path, captured):
    (tmp_path / "s.csv").write_text("num_nodes,node_node_ms,anchor_ms\n1000,90,12\n2000,OOM,23\n")
    plot_scaling(tmp_path / "s.csv", "unused.svg")
    lines = captured[0].axes[0].get_lines()
    assert [len(line.get_xdata()) for line in lines] == [1, 2]


def test_export_renders_only_present_tables(tmp_path):
    (tmp_path / "robustness.csv").write_bytes(FIXTURE.read_bytes())
    out = tmp_path / "figs"
    assert export_plots(tmp_path, out) == [out / "robustness.svg"]
    assert export_plots(tmp_path / "figs") == []
