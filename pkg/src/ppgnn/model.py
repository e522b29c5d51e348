"""End-to-end model: graph learner, latent sampling, layer stack and head.

Gradient routing follows the structure of the pipeline. The latent graph is a
discrete sample that enters the layer stack unweighted, so the classification
loss reaches only the stack and the head; the embedding net and temperature are
trained only by the reward-weighted graph loss, with the reward held constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.sparse as sp

from .config import TrainConfig
from .graph import GraphDataset, degree_normalize
from .learner import (
    MAX_EXPONENT,
    AnchorSet,
    EmbeddingNet,
    LatentGraph,
    ProbabilityMatrix,
    _embed_backward,
    _embed_cached,
    anchor_probability_passing,
    gumbel_top_k,
    node_anchor_probabilities,
    pairwise_probabilities,
    passing_operator,
    probability_passing,
    sample_anchors,
    sigmoid,
)
from .losses import (
    LossBreakdown,
    RewardVector,
    graph_loss,
    graph_loss_grad,
    prediction_loss,
    prediction_loss_grad,
    reward,
)
from .message_passing import (
    AnchorPropagation,
    ClassifierHead,
    GcnStack,
    IdentityPropagation,
    OperatorPropagation,
    Propagation,
    StackCache,
    classify,
    latent_operator,
    predict,
    stack_backward,
    stack_forward,
)


class GraphContext:
    """Dataset-derived constants reused by every forward pass."""

    def __init__(self, dataset: GraphDataset, config: TrainConfig):
        self.dataset = dataset
        self.x = dataset.features
        self.labels = dataset.labels
        self.passing = None
        self.passing_t = None
        self.embed_x = None
        self.observed = None
        if config.learns_graph:
            self.passing = passing_operator(dataset.adjacency)
            self.passing_t = self.passing.T.tocsr()
            self.embed_x = self.x
            if config.embed_graph_conv:
                self.embed_x = degree_normalize(dataset.adjacency, "symmetric", True).matrix @ self.x
        elif config.model == "gcn":
            self.observed = OperatorPropagation(degree_normalize(dataset.adjacency, "symmetric", True))


@dataclass
class Forward:
    logits: np.ndarray
    prop: Propagation
    stack_cache: StackCache
    hidden: np.ndarray
    latent: LatentGraph | None = None
    scores: ProbabilityMatrix | None = None
    z: np.ndarray | None = None
    embed_cache: Any = None

    @property
    def predictions(self) -> np.ndarray:
        return predict(self.logits)


@dataclass
class Objective:
    losses: LossBreakdown
    reward: RewardVector | None
    dlogits: np.ndarray


class Model:
    def __init__(self, config: TrainConfig, num_nodes: int, num_features: int, num_classes: int,
                 rng: np.random.Generator):
        self.config = config
        self.mode = config.model
        self.num_nodes = num_nodes
        self.embedder: EmbeddingNet | None = None
        self.anchors: AnchorSet | None = None
        if config.learns_graph:
            self.embedder = EmbeddingNet.init(num_features, rng, config.embed_hidden,
                                              config.embed_dim, config.embed_graph_conv)
        self.stack = GcnStack.init(num_features, rng, config.hidden, config.num_layers, config.dropout)
        self.head = ClassifierHead.init(config.hidden, num_classes, rng)
        if self.mode == "ppgnn_anchor":
            s = config.num_anchors or math.ceil(0.1 * num_nodes)
            self.anchors = sample_anchors(num_nodes, min(s, num_nodes), config.seed)
        if config.learns_graph:
            num_cols = self.anchors.size if self.anchors is not None else num_nodes
            if config.k > num_cols:
                raise ValueError(f"k={config.k} exceeds the {num_cols} candidate columns")

    @classmethod
    def for_dataset(cls, dataset: GraphDataset, config: TrainConfig, rng: np.random.Generator) -> Model:
        return cls(config, dataset.num_nodes, dataset.num_features, dataset.num_classes, rng)

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        if self.embedder is not None:
            out.update({f"embed.{k}": v for k, v in self.embedder.parameters().items()})
        out.update({f"gcn.{k}": v for k, v in self.stack.parameters().items()})
        out.update({f"head.{k}": v for k, v in self.head.parameters().items()})
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in self.parameters().items():
            arr[...] = state[name]

    @property
    def temperature(self) -> float | None:
        return self.embedder.temperature if self.embedder is not None else None

    # -- forward ------------------------------------------------------------

    def refined_scores(self, ctx: GraphContext, z: np.ndarray | None = None) -> ProbabilityMatrix:
        if z is None:
            z, _ = _embed_cached(self.embedder, ctx.embed_x)
        t = self.embedder.temperature
        if self.anchors is None:
            return probability_passing(None, pairwise_probabilities(z, t), operator=ctx.passing)
        raw = node_anchor_probabilities(z, self.anchors, t)
        return anchor_probability_passing(None, raw, operator=ctx.passing)

    def node_scores(self, ctx: GraphContext) -> ProbabilityMatrix:
        """Refined node-node probabilities, whatever the sampling mode."""
        z, _ = _embed_cached(self.embedder, ctx.embed_x)
        return probability_passing(None, pairwise_probabilities(z, self.embedder.temperature),
                                   operator=ctx.passing)

    def forward(self, ctx: GraphContext, *, sampling: str = "deterministic",
                rng: np.random.Generator | None = None, latent: LatentGraph | None = None,
                train: bool = False) -> Forward:
        """One pass. ``latent`` pins the sampled graph; otherwise it is drawn from the scores."""
        z = cache = scores = None
        if self.embedder is not None:
            z, cache = _embed_cached(self.embedder, ctx.embed_x)
            scores = self.refined_scores(ctx, z)
            if latent is None:
                latent = gumbel_top_k(scores, self.config.k, sampling, rng=rng)
            prop = AnchorPropagation(latent) if self.anchors is not None \
                else OperatorPropagation(latent_operator(latent))
        elif self.mode == "gcn":
            prop = ctx.observed
        else:
            prop = IdentityPropagation()
        hidden, stack_cache = stack_forward(self.stack, prop, ctx.x, rng if train else None)
        logits = classify(self.head, hidden)
        return Forward(logits, prop, stack_cache, hidden, latent, scores, z, cache)

    # -- losses and gradients ----------------------------------------------

    def objective(self, fwd: Forward, labels, train_idx, delta: RewardVector | None = None) -> Objective:
        """Hybrid loss. ``delta`` overrides the reward computed from ``fwd``'s predictions."""
        l_pred = prediction_loss(fwd.logits, labels, train_idx)
        dlogits = prediction_loss_grad(fwd.logits, labels, train_idx)
        l_graph = 0.0
        if self.embedder is not None:
            if delta is None:
                delta = reward(labels, fwd.predictions, train_idx)
            l_graph = graph_loss(delta, fwd.scores, fwd.latent)
        return Objective(LossBreakdown(l_pred, l_graph), delta, dlogits)

    def backward(self, ctx: GraphContext, fwd: Forward, obj: Objective,
                 wrt=None) -> dict[str, np.ndarray]:
        """Exact gradients of ``obj.losses.total`` for every parameter (or the names in ``wrt``)."""
        names = list(self.parameters())
        if wrt is not None:
            unknown = [w for w in wrt if w not in names]
            if unknown:
                raise ValueError(f"not model parameters: {unknown}")
        grads = {}
        dhidden = obj.dlogits @ self.head.w.T
        grads["head.w"] = fwd.hidden.T @ obj.dlogits
        grads["head.b"] = obj.dlogits.sum(axis=0)
        stack_grads, _ = stack_backward(self.stack, fwd.prop, fwd.stack_cache, dhidden)
        grads.update({f"gcn.{k}": v for k, v in stack_grads.items()})
        if self.embedder is not None:
            grads.update(self._learner_backward(ctx, fwd, obj.reward))
        if wrt is not None:
            grads = {k: grads[k] for k in wrt}
        return grads

    def _learner_backward(self, ctx: GraphContext, fwd: Forward, delta: RewardVector):
        net = self.embedder
        g_scores = graph_loss_grad(delta, fwd.scores, fwd.latent)
        # passing is linear: dL/dP = M^T dL/dP_hat, sparse because dL/dP_hat is
        g_raw = sp.coo_matrix(ctx.passing_t @ g_scores)
        rows, cols, g = g_raw.row, g_raw.col, g_raw.data
        z = fwd.z
        col_nodes = self.anchors.indices if self.anchors is not None else np.arange(z.shape[0])
        diff = z[rows] - z[col_nodes[cols]]
        d = np.einsum("ij,ij->i", diff, diff)
        t = net.temperature
        live = d / t < MAX_EXPONENT
        p = np.exp(-np.where(live, d, 0.0) / t)
        dd = np.where(live, -g * p / t, 0.0)
        dt = float(np.sum(np.where(live, g * p * d / (t * t), 0.0)))
        contrib = 2.0 * dd[:, None] * diff
        dz = np.zeros_like(z)
        np.add.at(dz, rows, contrib)
        np.add.at(dz, col_nodes[cols], -contrib)
        out = {f"embed.{k}": v for k, v in _embed_backward(net, fwd.embed_cache, dz).items()}
        out["embed.tau"] = np.array(dt * sigmoid(net.tau))
        return out

    def loss_with_pinned_sample(self, ctx: GraphContext, latent: LatentGraph | None,
                                delta: RewardVector | None, labels, train_idx) -> float:
        """Total loss with the latent graph and reward held fixed (for finite differences)."""
        return self.pinned_evaluation(ctx, latent, delta, labels, train_idx)[0]

    def pinned_evaluation(self, ctx: GraphContext, latent: LatentGraph | None,
                          delta: RewardVector | None, labels, train_idx) -> tuple[float, np.ndarray]:
        """Pinned-sample loss plus the on/off pattern of every rectifier in the model."""
        fwd = self.forward(ctx, latent=latent)
        pre = list(fwd.stack_cache.pre)
        if fwd.embed_cache is not None:
            pre.append(fwd.embed_cache[1])
        pattern = np.concatenate([(p > 0).ravel() for p in pre])
        return self.objective(fwd, labels, train_idx, delta).losses.total, pattern
