"""Experiment drivers: repeated benchmarks, edge-noise sweeps, homophily bins, timing."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ExperimentConfig, dump_config
from .graph import GraphDataset, NoiseSpec, generate_sbm, load_dataset, perturb_edges
from .learner import (
    EmbeddingNet,
    _embed_cached,
    anchor_probability_passing,
    gumbel_top_k,
    node_anchor_probabilities,
    pairwise_probabilities,
    passing_operator,
    probability_passing,
    sample_anchors,
)
from .model import GraphContext, Model
from .rng import make_rng
from .training import DivergenceError, EpochRecord, evaluate, fit

log = logging.getLogger(__name__)


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_csv(path, header: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row.get(k) is None else row[k]) for k in header})
    atomic_write(path, buf.getvalue())


def build_dataset(cfg: ExperimentConfig) -> GraphDataset:
    if cfg.dataset is not None:
        ds = load_dataset(cfg.dataset)
    else:
        s = cfg.sbm
        ds = generate_sbm(s.num_nodes, s.num_blocks, s.p_in, s.p_out, s.feat_dim, s.feat_noise, s.seed)
    if cfg.noise is not None:
        ds = perturb_edges(ds, cfg.noise)
    return ds


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


@dataclass
class MetricsRecord:
    model: str
    seeds: list[int] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    best_epochs: list[int | None] = field(default_factory=list)
    wall_s: list[float] = field(default_factory=list)
    failed: list[dict] = field(default_factory=list)
    traces: list[list[EpochRecord]] = field(default_factory=list)

    @property
    def mean(self) -> float | None:
        return float(np.mean(self.test_acc)) if self.test_acc else None

    @property
    def std(self) -> float | None:
        # population std over runs, so a single run reports 0
        return float(np.std(self.test_acc)) if self.test_acc else None

    @property
    def warning(self) -> bool:
        return bool(self.failed)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "num_runs": len(self.seeds),
            "seeds": self.seeds,
            "test_acc": self.test_acc,
            "mean": self.mean,
            "std": self.std,
            "best_epochs": self.best_epochs,
            "wall_s": self.wall_s,
            "failed_runs": self.failed,
            "warning": self.warning,
        }

    def epochs_jsonl(self) -> str:
        lines = []
        for run, trace in enumerate(self.traces):
            for rec in trace:
                lines.append(json.dumps({"run": run, **asdict(rec)}))
        return "".join(line + "\n" for line in lines)


def run_benchmark(cfg: ExperimentConfig, dataset: GraphDataset | None = None,
                  write: bool = True) -> MetricsRecord:
    """``num_runs`` seeded fits (seed + run index), test accuracy of each best-validation model."""
    ds = dataset if dataset is not None else build_dataset(cfg)
    rec = MetricsRecord(cfg.model)
    for run in range(cfg.num_runs):
        seed = cfg.train.seed + run
        rec.seeds.append(seed)
        start = time.perf_counter()
        try:
            result = fit(ds, replace(cfg.train, seed=seed))
        except DivergenceError as exc:
            log.warning("run %d (seed %d) failed: %s", run, seed, exc)
            rec.failed.append({"run": run, "seed": seed, "epoch": exc.epoch, "error": str(exc)})
            rec.traces.append([])
            continue
        rec.wall_s.append(time.perf_counter() - start)
        rec.test_acc.append(evaluate(result.model, ds, "test", result.context))
        rec.best_epochs.append(result.best_epoch)
        rec.traces.append(result.epochs)
        log.info("%s run %d: test acc %.4f", cfg.model, run, rec.test_acc[-1])
    if not rec.test_acc:
        raise DivergenceError(rec.failed[0]["epoch"], "every run diverged")
    if write:
        out = Path(cfg.out)
        atomic_write(out / "metrics.json", json.dumps(rec.to_dict(), indent=2) + "\n")
        atomic_write(out / "epochs.jsonl", rec.epochs_jsonl())
        atomic_write(out / "config.json", dump_config(cfg))
    return rec


# ---------------------------------------------------------------------------
# robustness
# ---------------------------------------------------------------------------

ROBUSTNESS_HEADER = ["model", "mode", "ratio", "mean", "std", "runs"]


def run_robustness(cfg: ExperimentConfig, ratios, modes=("add", "delete"), models=None,
                   write: bool = True) -> list[dict]:
    """Benchmark every (model, noise mode, ratio) cell on the perturbed observed graph.

    The perturbation seed is shared across models and runs, so cells at one ratio
    compare models on the same noisy graph.
    """
    base = build_dataset(replace(cfg, noise=None))
    noise_seed = cfg.noise.seed if cfg.noise is not None else cfg.train.seed
    models = list(models) if models else [cfg.model]
    rows = []
    for model in models:
        mcfg = cfg.with_train(model=model)
        clean = None
        for mode in modes:
            for ratio in ratios:
                if ratio == 0:
                    if clean is None:
                        clean = run_benchmark(mcfg, base, write=False)
                    rec = clean
                else:
                    ds = perturb_edges(base, NoiseSpec(mode, float(ratio), noise_seed))
                    rec = run_benchmark(mcfg, ds, write=False)
                rows.append({"model": mcfg.model, "mode": mode, "ratio": float(ratio),
                             "mean": rec.mean, "std": rec.std, "runs": len(rec.test_acc)})
    if write:
        write_csv(Path(cfg.out) / "robustness.csv", ROBUSTNESS_HEADER, rows)
    return rows


# ---------------------------------------------------------------------------
# homophily
# ---------------------------------------------------------------------------

HOMOPHILY_HEADER = ["bin", "lower", "upper", "same_label_ratio", "pairs"]
MAX_HOMOPHILY_PAIRS = 1_000_000


def homophily_table(scores: np.ndarray, labels: np.ndarray, nodes: np.ndarray, num_bins: int = 10,
                    max_pairs: int = MAX_HOMOPHILY_PAIRS, seed: int = 0) -> list[dict]:
    """Same-label fraction of ordered node pairs, binned by score over ``(0, 1]``.

    Bin ``b`` holds scores in ``(b/num_bins, (b+1)/num_bins]``. Above ``max_pairs``
    ordered pairs, ``max_pairs`` of them are drawn uniformly with replacement.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    m = nodes.size
    if m < 2:
        raise ValueError("homophily needs at least two nodes")
    if m * (m - 1) <= max_pairs:
        i, j = np.nonzero(~np.eye(m, dtype=bool))
    else:
        rng = make_rng(seed)
        i = rng.integers(0, m, size=max_pairs)
        j = (i + rng.integers(1, m, size=max_pairs)) % m
    a, b = nodes[i], nodes[j]
    s = scores[a, b]
    bins = np.clip(np.ceil(s * num_bins).astype(np.int64) - 1, 0, num_bins - 1)
    same = labels[a] == labels[b]
    counts = np.bincount(bins, minlength=num_bins)
    hits = np.bincount(bins, weights=same, minlength=num_bins)
    rows = []
    for k in range(num_bins):
        ratio = float(hits[k] / counts[k]) if counts[k] else None
        rows.append({"bin": k, "lower": k / num_bins, "upper": (k + 1) / num_bins,
                     "same_label_ratio": ratio, "pairs": int(counts[k])})
    return rows


def homophily_trend(rows: list[dict]) -> float:
    """Spearman correlation of bin index with same-label ratio over non-empty bins.

    Fewer than two non-empty bins, or a constant ratio, carry no trend and give 0.
    """
    pts = [(r["bin"], r["same_label_ratio"]) for r in rows if r["pairs"]]
    if len(pts) < 2:
        return 0.0
    x, y = zip(*pts)
    if len(set(y)) == 1:
        return 0.0
    return float(stats.spearmanr(x, y).statistic)


def run_homophily(model: Model, dataset: GraphDataset, num_bins: int = 10, *,
                  context: GraphContext | None = None, split: str = "test",
                  max_pairs: int = MAX_HOMOPHILY_PAIRS, seed: int = 0,
                  out: str | Path | None = None) -> list[dict]:
    """Bin the refined node-node probabilities of ``split`` pairs; writes ``homophily.csv`` if ``out``."""
    if model.embedder is None:
        raise ValueError(f"model mode {model.mode!r} has no graph learner")
    ctx = context or GraphContext(dataset, model.config)
    nodes = dataset.splits[split]
    if nodes.size == 0:
        raise ValueError(f"split {split!r} is empty")
    scores = model.node_scores(ctx).scores
    rows = homophily_table(scores, dataset.labels, nodes, num_bins, max_pairs, seed)
    if out is not None:
        write_csv(Path(out) / "homophily.csv", HOMOPHILY_HEADER, rows)
    return rows


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

SCALING_HEADER = ["num_nodes", "node_node_ms", "anchor_ms"]


def _available_bytes() -> int | None:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None


def graph_learning_stage(net: EmbeddingNet, ds: GraphDataset, k: int, rng: np.random.Generator,
                         anchors=None):
    """Embed, kernel, probability passing and Gumbel-Top-k: the timed structure-learning step."""
    z, _ = _embed_cached(net, ds.features)
    op = passing_operator(ds.adjacency)
    t = net.temperature
    if anchors is None:
        refined = probability_passing(None, pairwise_probabilities(z, t), operator=op)
    else:
        refined = anchor_probability_passing(None, node_anchor_probabilities(z, anchors, t), operator=op)
    return gumbel_top_k(refined, k, "stochastic", rng=rng)


def scaling_sbm(n: int, seed: int, feat_dim: int = 32, num_blocks: int = 4,
                avg_degree: float = 4.0) -> GraphDataset:
    """SBM with expected degree ``avg_degree`` (80% within-block) at any size."""
    block = n / num_blocks
    p_in = min(1.0, 0.8 * avg_degree / max(block - 1, 1))
    p_out = min(p_in, 0.2 * avg_degree / max(n - block, 1))
    return generate_sbm(n, num_blocks, p_in, p_out, feat_dim, 1.0, seed)


def run_scaling(sizes, s: int = 64, k: int = 4, *, reps: int = 5, seed: int = 0,
                feat_dim: int = 32, embed_dim: int = 32, out=None) -> list[dict]:
    """Median wall time (ms) of the structure-learning stage per size, node-node vs anchor.

    A node-node cell whose dense N x N buffers would not fit in free memory is
    reported as ``"OOM"`` without being attempted.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    rows = []
    for n in sizes:
        ds = scaling_sbm(n, seed, feat_dim)
        net = EmbeddingNet.init(feat_dim, make_rng(seed), 64, embed_dim)
        anchors = sample_anchors(n, min(s, n), seed)
        row = {"num_nodes": n}
        for name, anc in (("node_node_ms", None), ("anchor_ms", anchors)):
            if anc is None:
                avail = _available_bytes()
                if avail is not None and 4 * 8 * n * n > avail:
                    row[name] = "OOM"
                    continue
            times = []
            try:
                for r in range(reps):
                    rng = make_rng(seed + r)
                    start = time.perf_counter()
                    graph_learning_stage(net, ds, k, rng, anc)
                    times.append((time.perf_counter() - start) * 1e3)
            except MemoryError:
                row[name] = "OOM"
                continue
            row[name] = float(np.median(times))
        rows.append(row)
    if out is not None:
        write_csv(Path(out) / "scaling.csv", SCALING_HEADER, rows)
    return rows


def loglog_slope(sizes, times) -> float | None:
    pts = [(n, t) for n, t in zip(sizes, times) if isinstance(t, (int, float))]
    if len(pts) < 2:
        return None
    x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])
