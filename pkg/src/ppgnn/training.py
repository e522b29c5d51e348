"""Joint optimization of the graph learner and the layer stack."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .graph import GraphDataset
from .model import GraphContext, Model
from .rng import make_rng

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, detail: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


class Adam:
    """Bias-corrected adaptive moment estimation, updating parameter arrays in place."""

    def __init__(self, lr: float = 5e-3, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay and p.ndim == 2:
                g = g + self.weight_decay * p
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.epsilon)


@dataclass
class EpochRecord:
    epoch: int
    l_pred: float
    l_graph: float
    train_acc: float
    val_acc: float
    wall_ms: float | None = None


@dataclass
class FitResult:
    model: Model
    context: GraphContext
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_acc: float | None = None

    def epochs_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.epochs)

    def write_epochs(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_text(self.epochs_jsonl())
        tmp.replace(path)


def _accuracy(pred: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    if idx.size == 0:
        raise ValueError("accuracy over an empty split")
    return float(np.mean(pred[idx] == labels[idx]))


def evaluate(model: Model, dataset: GraphDataset, split: str = "test",
             context: GraphContext | None = None) -> float:
    """Accuracy on ``split`` using the deterministic (top-k) latent graph."""
    ctx = context or GraphContext(dataset, model.config)
    idx = dataset.splits[split]
    if idx.size == 0:
        raise ValueError(f"split {split!r} is empty")
    return _accuracy(model.forward(ctx).predictions, dataset.labels, idx)


def fit(dataset: GraphDataset, config: TrainConfig) -> FitResult:
    """Train with early stopping on validation accuracy; returns the best-validation parameters.

    Each epoch draws one latent graph from the refined scores, takes one optimizer
    step on the hybrid loss, then scores train/val accuracy with the deterministic
    latent graph.
    """
    rng = make_rng(config.seed)
    model = Model.for_dataset(dataset, config, rng)
    ctx = GraphContext(dataset, config)
    result = FitResult(model, ctx)
    if config.max_epochs == 0:
        return result
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon, config.weight_decay)
    train_idx = dataset.splits["train"]
    val_idx = dataset.splits["val"]
    labels = dataset.labels
    params = model.parameters()
    best_state = model.state()
    best_val = -1.0
    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        try:
            fwd = model.forward(ctx, sampling="stochastic", rng=rng, train=True)
            obj = model.objective(fwd, labels, train_idx)
        except FloatingPointError as exc:
            raise DivergenceError(epoch, str(exc)) from None
        if not np.isfinite(obj.losses.total):
            raise DivergenceError(epoch)
        grads = model.backward(ctx, fwd, obj)
        opt.step(params, grads)
        try:
            pred = model.forward(ctx, sampling=config.eval_mode, rng=rng).predictions
        except FloatingPointError as exc:
            raise DivergenceError(epoch, str(exc)) from None
        train_acc = _accuracy(pred, labels, train_idx)
        val_acc = _accuracy(pred, labels, val_idx) if val_idx.size else train_acc
        wall = (time.perf_counter() - start) * 1e3 if config.record_wall_ms else None
        result.epochs.append(EpochRecord(epoch, obj.losses.l_pred, obj.losses.l_graph,
                                         train_acc, val_acc, wall))
        if val_acc > best_val:
            best_val = val_acc
            best_state = model.state()
            result.best_epoch = epoch
        elif epoch - result.best_epoch >= config.patience:
            log.debug("early stop at epoch %d (best %d)", epoch, result.best_epoch)
            break
    model.load_state(best_state)
    result.best_val_acc = best_val
    return result


def finite_difference_check(model: Model, ctx: GraphContext, labels, train_idx, *,
                            rel_step: float = 1e-4, seed: int = 0, zero_floor: float = 1e-6,
                            max_halvings: int = 4) -> dict[str, float]:
    """Compare analytic gradients with central differences, one entry at a time.

    The latent graph and the reward are sampled once and then pinned, matching how
    the analytic gradient treats them. Returns the relative error
    ``|g_a - g_fd| / max(|g_a|, |g_fd|, zero_floor)`` (vector norms) per parameter
    tensor. The floor keeps identically-zero gradients (the last embedding bias: the
    kernel only sees differences of embeddings) from comparing rounding noise with
    rounding noise.

    A central difference is only meaningful where the loss is smooth over the whole
    step. When a step flips any rectifier between its two sides, the step is cut by
    10x (up to ``max_halvings`` times) until both sides share one activation pattern.
    """
    rng = make_rng(seed)
    fwd = model.forward(ctx, sampling="stochastic", rng=rng)
    obj = model.objective(fwd, labels, train_idx)
    analytic = model.backward(ctx, fwd, obj)
    _, base = model.pinned_evaluation(ctx, fwd.latent, obj.reward, labels, train_idx)
    errors = {}
    for name, p in model.parameters().items():
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = rel_step * max(abs(orig), 1.0)
            for _ in range(max_halvings + 1):
                flat[i] = orig + h
                up, up_pattern = model.pinned_evaluation(ctx, fwd.latent, obj.reward, labels, train_idx)
                flat[i] = orig - h
                down, down_pattern = model.pinned_evaluation(ctx, fwd.latent, obj.reward, labels, train_idx)
                flat[i] = orig
                if np.array_equal(up_pattern, base) and np.array_equal(down_pattern, base):
                    break
                h *= 0.1
            nflat[i] = (up - down) / (2.0 * h)
        a = analytic[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric), zero_floor)
        errors[name] = float(np.linalg.norm(a - numeric) / scale)
    return errors
