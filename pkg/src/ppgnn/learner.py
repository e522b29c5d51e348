"""Latent graph construction.

Node embeddings go through a Gaussian kernel to give edge probabilities, either
node-to-node (N x N) or node-to-anchor (N x s). The observed adjacency then
refines each probability row into the average of its neighbours' rows
(``D^-1 (A + I) P``), and Gumbel-Top-k turns the refined rows into exactly ``k``
selected edges per node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .graph import SparseAdjacency, degree_normalize
from .rng import make_rng

TEMPERATURE_FLOOR = 1e-4
SCORE_FLOOR = 1e-12
# exp(-700) is still a normal double; beyond it the kernel would underflow to 0
MAX_EXPONENT = 700.0


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass(eq=False)
class EmbeddingNet:
    """Two-layer perceptron ``x -> relu(x W1 + b1) W2 + b2`` plus the kernel temperature.

    With ``graph_conv`` the first layer propagates over the symmetric-normalized
    observed graph before the affine map.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    tau: np.ndarray
    graph_conv: bool = False

    @classmethod
    def init(cls, in_dim: int, rng: np.random.Generator, hidden: int = 64, out_dim: int = 32,
             graph_conv: bool = False) -> EmbeddingNet:
        # softplus(tau) + floor == 1
        tau = np.array(np.log(np.expm1(1.0 - TEMPERATURE_FLOOR)))
        return cls(glorot(rng, in_dim, hidden), np.zeros(hidden),
                   glorot(rng, hidden, out_dim), np.zeros(out_dim), tau, graph_conv)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    @property
    def temperature(self) -> float:
        return float(softplus(self.tau)) + TEMPERATURE_FLOOR

    def parameters(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "tau": self.tau}


@dataclass(frozen=True)
class AnchorSet:
    indices: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True, eq=False)
class ProbabilityMatrix:
    scores: np.ndarray
    kind: Literal["node_node", "node_anchor"]
    refined: bool = False
    anchors: AnchorSet | None = None

    def __post_init__(self):
        s = self.scores
        if s.ndim != 2:
            raise ValueError("scores must be a matrix")
        if self.kind == "node_node" and s.shape[0] != s.shape[1]:
            raise ValueError("node_node scores must be square")
        if self.kind == "node_anchor" and (self.anchors is None or self.anchors.size != s.shape[1]):
            raise ValueError("node_anchor scores need an anchor set matching the column count")
        if not (np.all(s > 0) and np.all(s <= 1)):
            raise ValueError("scores must lie in (0, 1]")

    @property
    def rows(self) -> int:
        return self.scores.shape[0]

    @property
    def cols(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True, eq=False)
class LatentGraph:
    """Exactly ``k`` unweighted selections per row; N x N or N x s (bipartite)."""

    structure: SparseAdjacency
    k: int
    mode: Literal["stochastic", "deterministic"]
    kind: Literal["node_node", "node_anchor"] = "node_node"

    @classmethod
    def from_columns(cls, columns: np.ndarray, num_cols: int, mode, kind="node_node") -> LatentGraph:
        columns = np.sort(np.asarray(columns, dtype=np.int64), axis=1)
        n, k = columns.shape
        adj = SparseAdjacency(n, num_cols, np.arange(n + 1) * k, columns.ravel())
        return cls(adj, k, mode, kind)

    @property
    def columns(self) -> np.ndarray:
        return self.structure.col_indices.reshape(self.structure.num_rows, self.k)

    @property
    def shape(self) -> tuple[int, int]:
        return self.structure.shape


# ---------------------------------------------------------------------------
# embeddings and kernels
# ---------------------------------------------------------------------------


def embedding_input(net: EmbeddingNet, x: np.ndarray, a0: SparseAdjacency | None) -> np.ndarray:
    """Input rows to the first affine map: ``x`` itself or its graph-convolved version."""
    if not net.graph_conv:
        return x
    if a0 is None:
        raise ValueError("graph-convolution embedding needs the observed adjacency")
    return degree_normalize(a0, "symmetric", self_loops=True).matrix @ x


def _embed_cached(net: EmbeddingNet, x_in: np.ndarray):
    pre = x_in @ net.w1 + net.b1
    hidden = np.maximum(pre, 0.0)
    z = hidden @ net.w2 + net.b2
    return z, (x_in, pre, hidden)


def _embed_backward(net: EmbeddingNet, cache, dz: np.ndarray) -> dict[str, np.ndarray]:
    x_in, pre, hidden = cache
    dh = (dz @ net.w2.T) * (pre > 0)
    return {"w1": x_in.T @ dh, "b1": dh.sum(axis=0), "w2": hidden.T @ dz, "b2": dz.sum(axis=0)}


def embed(net: EmbeddingNet, x: np.ndarray, a0: SparseAdjacency | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"expected features of width {net.in_dim}, got shape {x.shape}")
    z, _ = _embed_cached(net, embedding_input(net, x, a0))
    return z


def squared_distances(z: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``||z_i - c_j||^2`` for every row pair, via the Gram expansion."""
    d = (z * z).sum(axis=1)[:, None] - 2.0 * (z @ c.T)
    d += (c * c).sum(axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _kernel(d: np.ndarray, t: float) -> np.ndarray:
    # in place: d is a scratch buffer owned by the caller
    d *= -1.0 / t
    np.maximum(d, -MAX_EXPONENT, out=d)
    return np.exp(d, out=d)


def _check_embeddings(z: np.ndarray, t: float) -> None:
    if not t > 0:
        raise ValueError(f"temperature must be positive, got {t}")
    if not np.all(np.isfinite(z)):
        raise ValueError("embeddings contain non-finite values")


def pairwise_probabilities(z: np.ndarray, t: float) -> ProbabilityMatrix:
    """Gaussian-kernel edge probabilities ``exp(-||z_i - z_j||^2 / t)`` for all node pairs."""
    z = np.asarray(z, dtype=np.float64)
    _check_embeddings(z, t)
    d = squared_distances(z, z)
    d += d.T
    d *= 0.5
    np.fill_diagonal(d, 0.0)
    return ProbabilityMatrix(_kernel(d, t), "node_node")


def sample_anchors(n: int, s: int, seed: int) -> AnchorSet:
    if not 1 <= s <= n:
        raise ValueError(f"anchor count must be in [1, {n}], got {s}")
    idx = make_rng(seed).choice(n, size=s, replace=False)
    return AnchorSet(np.sort(idx), seed)


def node_anchor_probabilities(z: np.ndarray, anchors: AnchorSet, t: float) -> ProbabilityMatrix:
    z = np.asarray(z, dtype=np.float64)
    _check_embeddings(z, t)
    if anchors.size and anchors.indices.max() >= z.shape[0]:
        raise ValueError("anchor index outside the node range")
    d = squared_distances(z, z[anchors.indices])
    d[anchors.indices, np.arange(anchors.size)] = 0.0
    return ProbabilityMatrix(_kernel(d, t), "node_anchor", anchors=anchors)


# ---------------------------------------------------------------------------
# probability passing
# ---------------------------------------------------------------------------


def passing_operator(a0: SparseAdjacency) -> sp.csr_matrix:
    """Row-stochastic ``D^-1 (A0 + I)``."""
    return degree_normalize(a0, "row_stochastic", self_loops=True).matrix


def _pass(a0, p: ProbabilityMatrix, op: sp.csr_matrix | None) -> np.ndarray:
    if p.refined:
        raise ValueError("probabilities have already been refined")
    if a0 is not None and a0.shape != (p.rows, p.rows):
        raise ValueError(f"adjacency shape {a0.shape} does not match {p.rows} probability rows")
    if op is None:
        op = passing_operator(a0)
    out = np.asarray(op @ p.scores)
    # convex combinations can overshoot 1 by an ulp
    np.minimum(out, 1.0, out=out)
    return out


def probability_passing(a0: SparseAdjacency, p: ProbabilityMatrix, *,
                        operator: sp.csr_matrix | None = None) -> ProbabilityMatrix:
    if p.kind != "node_node":
        raise ValueError("expected node-node probabilities")
    return ProbabilityMatrix(_pass(a0, p, operator), "node_node", refined=True)


def anchor_probability_passing(a0: SparseAdjacency, r: ProbabilityMatrix, *,
                               operator: sp.csr_matrix | None = None) -> ProbabilityMatrix:
    if r.kind != "node_anchor":
        raise ValueError("expected node-anchor probabilities")
    return ProbabilityMatrix(_pass(a0, r, operator), "node_anchor", refined=True, anchors=r.anchors)


# ---------------------------------------------------------------------------
# sparsification
# ---------------------------------------------------------------------------


def _top_k_deterministic(s: np.ndarray, k: int) -> np.ndarray:
    """Columns of the k largest entries per row; ties go to the lowest column index."""
    n, c = s.shape
    kth = -np.partition(-s, k - 1, axis=1)[:, k - 1:k]
    above = s > kth
    need = k - above.sum(axis=1, keepdims=True)
    tied = s == kth
    take = above | (tied & (np.cumsum(tied, axis=1) <= need))
    return np.nonzero(take)[1].reshape(n, k)


def gumbel_top_k(scores: ProbabilityMatrix | np.ndarray, k: int,
                 mode: Literal["stochastic", "deterministic"] = "stochastic",
                 seed: int | None = None, *, rng: np.random.Generator | None = None,
                 block_rows: int = 1024) -> LatentGraph:
    """Select ``k`` columns per row.

    Stochastic mode ranks ``log(s_ij) - log(-log(q_ij))`` with ``q_ij ~ U(0, 1)``,
    which draws ``k`` columns without replacement with probabilities proportional to
    the scores. Deterministic mode ranks the scores themselves. Scores are floored at
    ``1e-12`` before the logarithm.
    """
    kind = scores.kind if isinstance(scores, ProbabilityMatrix) else "node_node"
    s = scores.scores if isinstance(scores, ProbabilityMatrix) else np.asarray(scores, float)
    n, c = s.shape
    if not 1 <= k <= c:
        raise ValueError(f"k must be in [1, {c}], got {k}")
    if mode == "deterministic":
        cols = np.empty((n, k), dtype=np.int64)
        for lo in range(0, n, block_rows):
            cols[lo:lo + block_rows] = _top_k_deterministic(s[lo:lo + block_rows], k)
        return LatentGraph.from_columns(cols, c, mode, kind)
    if mode != "stochastic":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if rng is None:
        rng = make_rng(0 if seed is None else seed)
    if k == c:
        return LatentGraph.from_columns(np.tile(np.arange(c), (n, 1)), c, mode, kind)
    tiny = np.finfo(np.float64).tiny
    cols = np.empty((n, k), dtype=np.int64)
    for lo in range(0, n, block_rows):
        block = s[lo:lo + block_rows]
        q = rng.random(block.shape)
        np.clip(q, tiny, 1.0 - np.finfo(np.float64).epsneg, out=q)
        keys = np.log(np.maximum(block, SCORE_FLOOR))
        keys -= np.log(-np.log(q))
        cols[lo:lo + block_rows] = np.argpartition(-keys, k - 1, axis=1)[:, :k]
    return LatentGraph.from_columns(cols, c, mode, kind)
