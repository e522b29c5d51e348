"""Observed-graph structures: CSR adjacency, datasets, perturbation, normalization.

Dataset directory layout (all indices 0-based)::

    features.csv   N rows of comma-separated reals
    edges.csv      one ``src,dst`` pair per line, undirected
    labels.csv     one integer class index per line
    splits.json    {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .rng import make_rng

SPLIT_NAMES = ("train", "val", "test")
DATASET_FILES = ("features.csv", "edges.csv", "labels.csv", "splits.json")


class DatasetError(ValueError):
    """Malformed or inconsistent dataset input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SparseAdjacency:
    """Compressed sparse row matrix. ``values=None`` means every stored entry is 1."""

    num_rows: int
    num_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray | None = None

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        if offsets.shape != (self.num_rows + 1,):
            raise ValueError(f"row_offsets must have length {self.num_rows + 1}, got {offsets.shape}")
        if offsets[0] != 0 or offsets[-1] != cols.size:
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(offsets) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if cols.size and (cols.min() < 0 or cols.max() >= self.num_cols):
            raise ValueError(f"col_indices outside [0, {self.num_cols})")
        object.__setattr__(self, "row_offsets", _frozen(offsets))
        object.__setattr__(self, "col_indices", _frozen(cols))
        if self.values is not None:
            vals = np.ascontiguousarray(self.values, dtype=np.float64)
            if vals.shape != cols.shape:
                raise ValueError("values must align with col_indices")
            object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def from_scipy(cls, m: sp.spmatrix, *, keep_values: bool = True) -> SparseAdjacency:
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        vals = m.data.astype(np.float64) if keep_values else None
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, vals)

    @classmethod
    def from_edges(cls, n: int, src, dst) -> SparseAdjacency:
        """Undirected 0/1 adjacency from an edge list; duplicates, reversals and self-loops dropped."""
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise ValueError("src and dst must have the same length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise ValueError(f"edge endpoint outside [0, {n})")
        keep = src != dst
        rows = np.concatenate([src[keep], dst[keep]])
        cols = np.concatenate([dst[keep], src[keep]])
        m = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        m.sum_duplicates()
        m.data[:] = 1.0
        return cls.from_scipy(m, keep_values=False)

    @classmethod
    def identity(cls, n: int) -> SparseAdjacency:
        return cls(n, n, np.arange(n + 1), np.arange(n))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self) -> int:
        return int(self.col_indices.size)

    @cached_property
    def scipy(self) -> sp.csr_matrix:
        vals = np.ones(self.nnz) if self.values is None else self.values
        return sp.csr_matrix((vals, self.col_indices, self.row_offsets), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        return self.scipy.toarray()

    def row_counts(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def edges(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with ``src < dst``, lexicographically sorted."""
        rows = np.repeat(np.arange(self.num_rows), self.row_counts())
        mask = rows < self.col_indices
        return np.column_stack([rows[mask], self.col_indices[mask]])

    @property
    def num_edges(self) -> int:
        return int(self.edges().shape[0])

    def is_symmetric(self) -> bool:
        m = self.scipy
        return (m != m.T).nnz == 0

    def with_edges(self, pairs) -> SparseAdjacency:
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        e = np.vstack([self.edges(), pairs])
        return SparseAdjacency.from_edges(self.num_rows, e[:, 0], e[:, 1])

    def without_edges(self, pairs) -> SparseAdjacency:
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        drop = set(map(tuple, pairs.tolist()))
        e = [p for p in map(tuple, self.edges().tolist()) if p not in drop]
        e = np.asarray(e, dtype=np.int64).reshape(-1, 2)
        return SparseAdjacency.from_edges(self.num_rows, e[:, 0], e[:, 1])


@dataclass(frozen=True, eq=False)
class GraphDataset:
    features: np.ndarray
    adjacency: SparseAdjacency
    labels: np.ndarray
    splits: dict[str, np.ndarray]
    num_classes: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        n = x.shape[0]
        if not np.all(np.isfinite(x)):
            raise DatasetError("features contain non-finite values")
        if y.shape != (n,):
            raise DatasetError(f"expected {n} labels, got {y.shape[0]}")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")
        if self.adjacency.shape != (n, n):
            raise DatasetError(f"adjacency shape {self.adjacency.shape} does not match {n} nodes")
        splits = {}
        for name in SPLIT_NAMES:
            idx = np.ascontiguousarray(self.splits.get(name, ()), dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise DatasetError(f"split {name!r} has indices outside [0, {n})")
            if np.unique(idx).size != idx.size:
                raise DatasetError(f"split {name!r} contains repeated indices")
            splits[name] = _frozen(idx)
        seen = np.concatenate(list(splits.values()))
        if np.unique(seen).size != seen.size:
            raise DatasetError("splits overlap")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "splits", splits)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def with_adjacency(self, adjacency: SparseAdjacency) -> GraphDataset:
        return replace(self, adjacency=adjacency)


@dataclass(frozen=True)
class NoiseSpec:
    mode: Literal["add", "delete"]
    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("add", "delete"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if not self.ratio >= 0:
            raise ValueError("noise ratio must be non-negative")


@dataclass(frozen=True, eq=False)
class NormalizedOperator:
    base: SparseAdjacency
    normalization: Literal["row_stochastic", "symmetric"]
    self_loops: bool

    @property
    def matrix(self) -> sp.csr_matrix:
        return self.base.scipy

    @property
    def num_nodes(self) -> int:
        return self.base.num_rows


# ---------------------------------------------------------------------------
# loading and saving
# ---------------------------------------------------------------------------


def _read_lines(path: Path):
    if not path.is_file():
        raise DatasetError(f"{path}: missing file")
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                yield lineno, line


def load_dataset(path) -> GraphDataset:
    """Read a dataset directory, validating every record against its file and line."""
    path = Path(path)
    fpath = path / "features.csv"
    rows, width = [], None
    for lineno, line in _read_lines(fpath):
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise DatasetError(f"{fpath}:{lineno}: unparseable feature value") from None
        if not all(math.isfinite(v) for v in row):
            raise DatasetError(f"{fpath}:{lineno}: non-finite feature value")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(f"{fpath}:{lineno}: expected {width} columns, got {len(row)}")
        rows.append(row)
    features = np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)
    n = features.shape[0]

    lpath = path / "labels.csv"
    labels = []
    for lineno, line in _read_lines(lpath):
        try:
            v = int(line)
        except ValueError:
            raise DatasetError(f"{lpath}:{lineno}: label is not an integer") from None
        if v < 0:
            raise DatasetError(f"{lpath}:{lineno}: negative label {v}")
        labels.append(v)
    if len(labels) != n:
        raise DatasetError(f"{lpath}: {len(labels)} labels for {n} feature rows")

    epath = path / "edges.csv"
    src, dst = [], []
    for lineno, line in _read_lines(epath):
        parts = line.split(",")
        try:
            i, j = (int(p) for p in parts)
        except ValueError:
            raise DatasetError(f"{epath}:{lineno}: expected 'src,dst' integer pair") from None
        if not (0 <= i < n and 0 <= j < n):
            raise DatasetError(f"{epath}:{lineno}: node index out of range [0, {n})")
        src.append(i)
        dst.append(j)

    spath = path / "splits.json"
    if not spath.is_file():
        raise DatasetError(f"{spath}: missing file")
    try:
        raw = json.loads(spath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{spath}:{exc.lineno}: {exc.msg}") from None
    splits = {}
    for name in SPLIT_NAMES:
        if name not in raw:
            raise DatasetError(f"{spath}: missing key {name!r}")
        idx = raw[name]
        if not all(isinstance(v, int) and 0 <= v < n for v in idx):
            raise DatasetError(f"{spath}: split {name!r} has an index out of range [0, {n})")
        splits[name] = np.asarray(idx, dtype=np.int64)
    names = list(splits)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            if np.intersect1d(splits[names[a]], splits[names[b]]).size:
                raise DatasetError(f"{spath}: splits {names[a]!r} and {names[b]!r} overlap")

    num_classes = max(labels) + 1 if labels else 0
    adjacency = SparseAdjacency.from_edges(n, src, dst)
    return GraphDataset(features, adjacency, np.asarray(labels), splits, num_classes)


def save_dataset(ds: GraphDataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _atomic_write(path / "features.csv", "".join(
        ",".join(repr(float(v)) for v in row) + "\n" for row in ds.features))
    _atomic_write(path / "edges.csv", "".join(f"{i},{j}\n" for i, j in ds.adjacency.edges()))
    _atomic_write(path / "labels.csv", "".join(f"{v}\n" for v in ds.labels))
    _atomic_write(path / "splits.json", json.dumps({k: v.tolist() for k, v in ds.splits.items()}))


def dataset_checksum(path) -> str:
    """SHA-256 over the four dataset files, in canonical order."""
    h = hashlib.sha256()
    for name in DATASET_FILES:
        h.update(name.encode())
        h.update((Path(path) / name).read_bytes())
    return h.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# synthetic graphs and perturbation
# ---------------------------------------------------------------------------


def block_sizes(num_nodes: int, num_blocks: int) -> np.ndarray:
    base, extra = divmod(num_nodes, num_blocks)
    return np.array([base + (b < extra) for b in range(num_blocks)], dtype=np.int64)


def generate_sbm(num_nodes: int, num_blocks: int, p_in: float, p_out: float,
                 feat_dim: int, feat_noise: float, seed: int,
                 train_frac: float = 0.2, val_frac: float = 0.2) -> GraphDataset:
    """Stochastic block model with block-centroid features.

    Block ``b`` holds a contiguous run of node ids; the first ``num_nodes % num_blocks``
    blocks get one extra node. Node features are the one-hot vector of the block
    (in the first ``num_blocks`` of ``feat_dim`` coordinates) plus isotropic Gaussian
    noise of scale ``feat_noise``. Splits are stratified per block.

    The RNG stream is consumed in a fixed order: one uniform matrix per block pair
    ``(a, b)`` with ``a <= b`` in row-major order, then the feature noise, then one
    permutation per block for the splits.
    """
    if num_blocks < 1 or num_blocks > num_nodes:
        raise ValueError(f"num_blocks must be in [1, num_nodes], got {num_blocks}")
    if not 0 <= p_out <= p_in <= 1:
        raise ValueError("need 0 <= p_out <= p_in <= 1")
    if feat_dim < num_blocks:
        raise ValueError("feat_dim must be at least num_blocks")
    if feat_noise < 0:
        raise ValueError("feat_noise must be non-negative")
    rng = make_rng(seed)
    sizes = block_sizes(num_nodes, num_blocks)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    src, dst = [], []
    for a in range(num_blocks):
        for b in range(a, num_blocks):
            u = rng.random((sizes[a], sizes[b]))
            hit = u < (p_in if a == b else p_out)
            if a == b:
                hit = np.triu(hit, k=1)
            i, j = np.nonzero(hit)
            src.append(i + starts[a])
            dst.append(j + starts[b])
    src = np.concatenate(src) if src else np.zeros(0, np.int64)
    dst = np.concatenate(dst) if dst else np.zeros(0, np.int64)
    labels = np.repeat(np.arange(num_blocks), sizes)
    features = np.zeros((num_nodes, feat_dim))
    features[np.arange(num_nodes), labels] = 1.0
    features += feat_noise * rng.standard_normal((num_nodes, feat_dim))
    splits = {name: [] for name in SPLIT_NAMES}
    for b in range(num_blocks):
        members = starts[b] + rng.permutation(sizes[b])
        n_train = max(1, int(round(train_frac * sizes[b])))
        n_val = int(round(val_frac * sizes[b]))
        splits["train"].append(members[:n_train])
        splits["val"].append(members[n_train:n_train + n_val])
        splits["test"].append(members[n_train + n_val:])
    splits = {k: np.sort(np.concatenate(v)) for k, v in splits.items()}
    adjacency = SparseAdjacency.from_edges(num_nodes, src, dst)
    return GraphDataset(features, adjacency, labels, splits, num_blocks)


def perturb_edges(g: GraphDataset, spec: NoiseSpec) -> GraphDataset:
    """Delete or add ``floor(ratio * |E|)`` undirected edges, chosen uniformly."""
    edges = g.adjacency.edges()
    n_edges = edges.shape[0]
    count = int(math.floor(spec.ratio * n_edges))
    if count == 0:
        return g
    rng = make_rng(spec.seed)
    n = g.num_nodes
    if spec.mode == "delete":
        if spec.ratio > 1:
            raise ValueError("delete ratio must not exceed 1")
        keep = rng.permutation(n_edges)[count:]
        kept = edges[np.sort(keep)]
        return g.with_adjacency(SparseAdjacency.from_edges(n, kept[:, 0], kept[:, 1]))
    available = n * (n - 1) // 2 - n_edges
    if count > available:
        raise ValueError(f"cannot add {count} edges: only {available} absent node pairs")
    seen = set(map(tuple, edges.tolist()))
    added = []
    while len(added) < count:
        batch = rng.integers(0, n, size=(2 * (count - len(added)) + 16, 2))
        for i, j in batch.tolist():
            if i == j:
                continue
            pair = (i, j) if i < j else (j, i)
            if pair in seen:
                continue
            seen.add(pair)
            added.append(pair)
            if len(added) == count:
                break
    return g.with_adjacency(g.adjacency.with_edges(added))


def degree_normalize(a: SparseAdjacency,
                     normalization: Literal["row_stochastic", "symmetric"] = "row_stochastic",
                     self_loops: bool = True) -> NormalizedOperator:
    """Build ``D^-1 A`` or ``D^-1/2 A D^-1/2``; with ``self_loops`` the diagonal is set to 1 first."""
    if a.num_rows != a.num_cols:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    m = a.scipy.copy()
    if self_loops:
        m = m.tolil()
        m.setdiag(1.0)
        m = m.tocsr()
    deg = np.asarray(m.sum(axis=1)).ravel()
    if normalization == "row_stochastic":
        if np.any(deg == 0):
            raise ValueError("row-stochastic normalization of a graph with isolated nodes; "
                             "enable self_loops")
        out = sp.diags(1.0 / deg) @ m
    elif normalization == "symmetric":
        inv_sqrt = np.zeros_like(deg)
        np.divide(1.0, np.sqrt(deg), out=inv_sqrt, where=deg > 0)
        d = sp.diags(inv_sqrt)
        out = d @ m @ d
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return NormalizedOperator(SparseAdjacency.from_scipy(out), normalization, self_loops)
