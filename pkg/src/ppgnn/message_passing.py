"""Node representation learning over a latent graph.

Two propagation schemes share one layer stack:

* GCN: ``relu(A_hat U W + b)`` with ``A_hat`` the symmetric-normalized operator of
  the symmetrized latent graph plus self-loops.
* two-step anchor passing: node rows are averaged into the anchors that select
  them, then every node averages its ``k`` anchors back, before the same affine
  map and rectifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import NormalizedOperator, SparseAdjacency, degree_normalize
from .learner import LatentGraph, glorot


class Propagation:
    """Linear row-mixing map ``H -> B H`` together with its adjoint ``G -> B^T G``."""

    def __call__(self, h: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityPropagation(Propagation):
    def __call__(self, h):
        return h

    def adjoint(self, g):
        return g


class OperatorPropagation(Propagation):
    def __init__(self, operator: NormalizedOperator | sp.spmatrix):
        m = operator.matrix if isinstance(operator, NormalizedOperator) else sp.csr_matrix(operator)
        self.matrix = m
        self._transpose = m.T.tocsr()

    def __call__(self, h):
        return np.asarray(self.matrix @ h)

    def adjoint(self, g):
        return np.asarray(self._transpose @ g)


class AnchorPropagation(Propagation):
    """``Delta^-1 A Lambda^-1 A^T`` for a bipartite node-anchor selection ``A``."""

    def __init__(self, a_star: LatentGraph):
        a = a_star.structure.scipy
        self.a = a
        self.a_t = a.T.tocsr()
        col_sums = np.asarray(a.sum(axis=0)).ravel()
        self.inv_lambda = np.zeros_like(col_sums)
        np.divide(1.0, col_sums, out=self.inv_lambda, where=col_sums > 0)
        row_sums = np.asarray(a.sum(axis=1)).ravel()
        self.inv_delta = 1.0 / row_sums

    def __call__(self, h):
        v = self.inv_lambda[:, None] * (self.a_t @ h)
        return self.inv_delta[:, None] * (self.a @ v)

    def adjoint(self, g):
        w = self.inv_lambda[:, None] * (self.a_t @ (self.inv_delta[:, None] * g))
        return np.asarray(self.a @ w)


def latent_operator(a_star: LatentGraph) -> NormalizedOperator:
    """GCN operator for a node-node latent graph: union with its transpose, self-loops, D^-1/2 A D^-1/2."""
    if a_star.kind != "node_node":
        raise ValueError("GCN propagation needs a node-node latent graph")
    a = a_star.structure.scipy
    sym = (a + a.T).tocsr()
    sym.data[:] = 1.0
    return degree_normalize(SparseAdjacency.from_scipy(sym, keep_values=False), "symmetric", True)


def _check_bipartite(u: np.ndarray, a_star: LatentGraph, rows: int) -> None:
    if a_star.kind != "node_anchor":
        raise ValueError("expected a node-anchor latent graph")
    if u.ndim != 2 or u.shape[0] != rows:
        raise ValueError(f"expected {rows} feature rows, got shape {u.shape}")


def anchor_aggregate(u: np.ndarray, a_star: LatentGraph) -> np.ndarray:
    """Mean of the node rows selecting each anchor; unselected anchors get a zero row."""
    _check_bipartite(u, a_star, a_star.shape[0])
    a = a_star.structure.scipy
    counts = np.asarray(a.sum(axis=0)).ravel()
    inv = np.zeros_like(counts)
    np.divide(1.0, counts, out=inv, where=counts > 0)
    return inv[:, None] * np.asarray(a.T @ u)


def anchor_broadcast(v: np.ndarray, a_star: LatentGraph) -> np.ndarray:
    """Mean of each node's selected anchor rows."""
    _check_bipartite(v, a_star, a_star.shape[1])
    a = a_star.structure.scipy
    return np.asarray(a @ v) / a_star.k


@dataclass(eq=False)
class DenseLayer:
    w: np.ndarray
    b: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]


@dataclass(eq=False)
class GcnStack:
    layers: list[DenseLayer]
    dropout: float = 0.0

    @classmethod
    def init(cls, in_dim: int, rng: np.random.Generator, hidden: int = 64, num_layers: int = 3,
             dropout: float = 0.0) -> GcnStack:
        widths = [in_dim] + [hidden] * num_layers
        layers = [DenseLayer(glorot(rng, a, b), np.zeros(b)) for a, b in zip(widths, widths[1:])]
        return cls(layers, dropout)

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{i}.w"] = layer.w
            out[f"{i}.b"] = layer.b
        return out


@dataclass(eq=False)
class ClassifierHead:
    w: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, in_dim: int, num_classes: int, rng: np.random.Generator) -> ClassifierHead:
        return cls(glorot(rng, in_dim, num_classes), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.w.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}


@dataclass
class StackCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)


def _as_propagation(operator) -> Propagation:
    if isinstance(operator, Propagation):
        return operator
    if isinstance(operator, LatentGraph):
        return AnchorPropagation(operator)
    return OperatorPropagation(operator)


def stack_forward(stack: GcnStack, prop: Propagation, x: np.ndarray,
                  rng: np.random.Generator | None = None) -> tuple[np.ndarray, StackCache]:
    """Forward pass keeping what the backward pass needs.

    Propagation is linear in the rows, so ``B (H W) == (B H) W``; the affine map runs
    first because it shrinks the width of wide bag-of-words inputs.
    """
    cache = StackCache()
    h = x
    for idx, layer in enumerate(stack.layers):
        if h.shape[1] != layer.in_dim:
            raise ValueError(f"layer {idx} expects width {layer.in_dim}, got {h.shape[1]}")
        mask = None
        if rng is not None and stack.dropout > 0:
            keep = 1.0 - stack.dropout
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        cache.inputs.append(h)
        cache.masks.append(mask)
        with np.errstate(over="ignore", invalid="ignore"):
            pre = prop(h @ layer.w) + layer.b
        if not np.all(np.isfinite(pre)):
            raise FloatingPointError(f"non-finite activations in layer {idx}")
        cache.pre.append(pre)
        h = np.maximum(pre, 0.0)
    return h, cache


def stack_backward(stack: GcnStack, prop: Propagation, cache: StackCache,
                   dout: np.ndarray, need_input_grad: bool = False):
    grads = {}
    g = dout
    for idx in reversed(range(len(stack.layers))):
        layer = stack.layers[idx]
        dpre = g * (cache.pre[idx] > 0)
        grads[f"{idx}.b"] = dpre.sum(axis=0)
        back = prop.adjoint(dpre)
        grads[f"{idx}.w"] = cache.inputs[idx].T @ back
        if idx > 0 or need_input_grad:
            g = back @ layer.w.T
            if cache.masks[idx] is not None:
                g = g * cache.masks[idx]
    return grads, (g if need_input_grad else None)


def gcn_forward(stack: GcnStack, operator, x: np.ndarray) -> np.ndarray:
    """Run every layer of ``stack`` over ``operator``.

    ``operator`` is a :class:`NormalizedOperator`, a node-anchor :class:`LatentGraph`
    (two-step anchor passing) or any :class:`Propagation`.
    """
    out, _ = stack_forward(stack, _as_propagation(operator), np.asarray(x, dtype=np.float64))
    return out


def classify(head: ClassifierHead, u_final: np.ndarray) -> np.ndarray:
    if u_final.ndim != 2 or u_final.shape[1] != head.w.shape[0]:
        raise ValueError(f"head expects width {head.w.shape[0]}, got shape {u_final.shape}")
    return u_final @ head.w + head.b


def predict(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(logits, axis=1)
