"""Classification loss, edge reward and the reward-weighted graph loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .learner import SCORE_FLOOR, LatentGraph, ProbabilityMatrix


@dataclass(frozen=True)
class RewardVector:
    """Per-node reward ``mean(c) - c_i`` over ``nodes``; ``c_i`` is 1 for a correct prediction."""

    delta: np.ndarray
    mean_correct: float
    nodes: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    l_pred: float
    l_graph: float

    @property
    def total(self) -> float:
        return self.l_pred + self.l_graph


def reward(labels, predictions, eval_set) -> RewardVector:
    eval_set = np.asarray(eval_set, dtype=np.int64)
    if eval_set.size == 0:
        raise ValueError("reward needs a non-empty evaluation set")
    correct = (np.asarray(predictions)[eval_set] == np.asarray(labels)[eval_set]).astype(np.float64)
    mean = float(correct.mean())
    return RewardVector(mean - correct, mean, eval_set)


def _selected(scores: ProbabilityMatrix, a_star: LatentGraph, nodes: np.ndarray):
    if a_star.shape != scores.scores.shape:
        raise ValueError(f"latent graph shape {a_star.shape} does not match scores {scores.scores.shape}")
    cols = a_star.columns[nodes]
    return cols, scores.scores[nodes[:, None], cols]


def graph_loss(delta: RewardVector, scores: ProbabilityMatrix, a_star: LatentGraph,
               eval_set=None) -> float:
    """Sum of ``delta_i * log s_ij`` over evaluated nodes ``i`` and their sampled edges ``j``."""
    nodes = delta.nodes if eval_set is None else np.asarray(eval_set, dtype=np.int64)
    if nodes.shape != delta.delta.shape:
        raise ValueError("reward vector and evaluation set differ in length")
    _, s = _selected(scores, a_star, nodes)
    logs = np.log(np.maximum(s, SCORE_FLOOR))
    return float((delta.delta[:, None] * logs).sum())


def graph_loss_grad(delta: RewardVector, scores: ProbabilityMatrix, a_star: LatentGraph) -> sp.csr_matrix:
    """Sparse ``dL_G / ds``: ``delta_i / s_ij`` on sampled entries above the score floor."""
    nodes = delta.nodes
    cols, s = _selected(scores, a_star, nodes)
    g = np.where(s > SCORE_FLOOR, delta.delta[:, None] / s, 0.0)
    rows = np.repeat(nodes, a_star.k)
    return sp.csr_matrix((g.ravel(), (rows, cols.ravel())), shape=scores.scores.shape)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def prediction_loss(logits, labels, train_set) -> float:
    """Mean softmax cross-entropy over ``train_set``."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    idx = np.asarray(train_set, dtype=np.int64)
    logp = _log_softmax(logits[idx])
    return float(-logp[np.arange(idx.size), np.asarray(labels)[idx]].mean())


def prediction_loss_grad(logits, labels, train_set) -> np.ndarray:
    idx = np.asarray(train_set, dtype=np.int64)
    probs = np.exp(_log_softmax(logits[idx]))
    probs[np.arange(idx.size), np.asarray(labels)[idx]] -= 1.0
    grad = np.zeros_like(logits)
    grad[idx] = probs / idx.size
    return grad
