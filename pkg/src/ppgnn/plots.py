"""SVG rendering of the robustness, homophily and scaling tables.

Output bytes depend only on the input tables: the SVG id salt is fixed and the
creation-date metadata is dropped.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import atomic_write  # noqa: E402

_RC = {"svg.hashsalt": "ppgnn", "svg.fonttype": "path", "font.family": "DejaVu Sans"}


class TableError(ValueError):
    pass


def read_table(path, required: list[str]) -> list[dict]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except FileNotFoundError:
        raise TableError(f"{path}: missing file") from None
    if rows or header:
        missing = [c for c in required if c not in header]
        if missing:
            raise TableError(f"{path}: missing columns {missing}")
    for lineno, row in enumerate(rows, start=2):
        if None in row or any(v is None for v in row.values()):
            raise TableError(f"{path}:{lineno}: wrong number of fields")
    return rows


def _num(value: str, path, lineno: int):
    if value in ("", "OOM"):
        return None
    try:
        return float(value)
    except ValueError:
        raise TableError(f"{path}:{lineno}: not a number: {value!r}") from None


def _save(fig, path: Path) -> None:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def plot_robustness(csv_path, out_path) -> None:
    """Grouped bars: one group per noise ratio, one bar per model, one panel per noise mode."""
    rows = read_table(csv_path, ["model", "mode", "ratio", "mean", "std"])
    with plt.rc_context(_RC):
        modes = list(dict.fromkeys(r["mode"] for r in rows)) or [""]
        fig, axes = plt.subplots(1, len(modes), figsize=(5 * len(modes), 3.5), squeeze=False)
        for ax, mode in zip(axes[0], modes):
            cells = [(i, r) for i, r in enumerate(rows, start=2) if r["mode"] == mode]
            ratios = list(dict.fromkeys(_num(r["ratio"], csv_path, i) for i, r in cells))
            models = list(dict.fromkeys(r["model"] for _, r in cells))
            width = 0.8 / max(len(models), 1)
            for m_idx, model in enumerate(models):
                xs, ys, es = [], [], []
                for i, r in cells:
                    if r["model"] != model:
                        continue
                    xs.append(ratios.index(_num(r["ratio"], csv_path, i)) + m_idx * width)
                    ys.append(100 * (_num(r["mean"], csv_path, i) or 0.0))
                    es.append(100 * (_num(r["std"], csv_path, i) or 0.0))
                ax.bar(xs, ys, width, yerr=es, label=model, capsize=2)
            ax.set_xticks([j + 0.4 - width / 2 for j in range(len(ratios))])
            ax.set_xticklabels([f"{100 * r:g}%" for r in ratios])
            ax.set_title(f"edge {mode}" if mode else "")
            ax.set_ylabel("test accuracy (%)")
            if models:
                ax.legend(fontsize="small")
        fig.tight_layout()
        _save(fig, Path(out_path))


def plot_homophily(csv_path, out_path) -> None:
    rows = read_table(csv_path, ["lower", "upper", "same_label_ratio", "pairs"])
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        labels, ys = [], []
        for i, r in enumerate(rows, start=2):
            lo, hi = _num(r["lower"], csv_path, i), _num(r["upper"], csv_path, i)
            labels.append(f"{lo:.1f}-{hi:.1f}")
            ys.append(_num(r["same_label_ratio"], csv_path, i) or 0.0)
        ax.bar(range(len(ys)), ys)
        ax.set_xticks(range(len(ys)))
        ax.set_xticklabels(labels, rotation=45, fontsize="small")
        ax.set_xlabel("refined edge probability")
        ax.set_ylabel("same-label ratio")
        ax.set_ylim(0, 1)
        fig.tight_layout()
        _save(fig, Path(out_path))


def plot_scaling(csv_path, out_path) -> None:
    rows = read_table(csv_path, ["num_nodes", "node_node_ms", "anchor_ms"])
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for col, label in (("node_node_ms", "node-node"), ("anchor_ms", "anchor")):
            pts = [(_num(r["num_nodes"], csv_path, i), _num(r[col], csv_path, i))
                   for i, r in enumerate(rows, start=2)]
            pts = [p for p in pts if p[1] is not None]
            if pts:
                ax.plot(*zip(*pts), marker="o", label=label)
        if rows:
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.legend()
        ax.set_xlabel("nodes")
        ax.set_ylabel("graph learning time (ms)")
        fig.tight_layout()
        _save(fig, Path(out_path))


PLOTTERS = {
    "robustness.csv": ("robustness.svg", plot_robustness),
    "homophily.csv": ("homophily.svg", plot_homophily),
    "scaling.csv": ("scaling.svg", plot_scaling),
}


def export_plots(in_dir, out_dir=None) -> list[Path]:
    """Render every known table found in ``in_dir``; returns the written SVG paths."""
    in_dir = Path(in_dir)
    out_dir = Path(out_dir) if out_dir is not None else in_dir
    written = []
    for name, (svg, plotter) in PLOTTERS.items():
        src = in_dir / name
        if src.exists():
            plotter(src, out_dir / svg)
            written.append(out_dir / svg)
    return written
