"""Adam with a step learning-rate schedule, training loop and baseline."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DomainError, TrainingError
from .network import EncoderDecoder, ModelSpec


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lr_after_drop: float = 1e-4
    drop_after_epoch: int = 20
    epochs: int = 50
    batch_size: int = 2
    micro_batch: int = 20
    workers: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.lr_after_drop > self.lr:
            raise DomainError("learning-rate schedule must be non-increasing")
        if self.batch_size < 1 or self.micro_batch < 1 or self.workers < 1:
            raise DomainError("batch sizes and workers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(epoch: int, config: TrainConfig = TrainConfig()) -> float:
    """Epochs are 1-based; the drop applies from ``drop_after_epoch + 1``."""
    return config.lr if epoch <= config.drop_after_epoch else config.lr_after_drop


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(state: AdamState, params: dict, grads: dict, epoch: int, config: TrainConfig = TrainConfig()) -> dict:
    """One bias-corrected Adam update, in place on ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    lr = learning_rate(epoch, config)
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + config.eps)).astype(p.dtype)
    return params


@dataclass
class TrainData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray


@dataclass
class TrainResult:
    model: EncoderDecoder
    history: list
    best_epoch: int

    def history_lines(self) -> list:
        return [json.dumps(h, sort_keys=True) for h in self.history]


def evaluate_loss(model: EncoderDecoder, x, y, batch_size: int = 64) -> float:
    pred = model.predict(x, batch_size).astype(np.float64)
    return float(np.mean((pred - np.asarray(y, dtype=np.float64)) ** 2))


def _batch_gradients(model, replicas, xb, yb, seeds, pool):
    """Loss and summed gradients of one batch, split into fixed chunks."""
    chunks = np.array_split(np.arange(len(xb)), len(seeds))

    def run(i):
        rep = replicas[i % len(replicas)]
        rep.set_dropout_seed(seeds[i])
        idx = chunks[i]
        rep.forward(xb[idx], train=True)
        loss, grads = rep.backward(yb[idx], scale=len(idx) / len(xb))
        return loss, {k: g.copy() for k, g in grads.items()}

    if pool is None:
        results = [run(i) for i in range(len(chunks))]
    else:
        # one replica per worker; chunk i always runs on replica i % workers
        results = [None] * len(chunks)
        for start in range(0, len(chunks), len(replicas)):
            ids = range(start, min(start + len(replicas), len(chunks)))
            for i, r in zip(ids, pool.map(run, ids)):
                results[i] = r
    loss = sum(r[0] for r in results)
    grads = {k: sum(r[1][k] for r in results) for k in results[0][1]}
    return loss, grads


def train(
    model_spec: ModelSpec,
    config: TrainConfig,
    data: TrainData,
    model: EncoderDecoder | None = None,
    dtype=np.float32,
    log=None,
) -> TrainResult:
    """Fit the encoder-decoder; returns the weights with minimum validation loss.

    ``history`` holds one dict per epoch with the learning rate, mean
    training loss (dropout active) and validation loss (dropout off).
    """
    if len(data.x_train) == 0 or len(data.x_val) == 0:
        raise DomainError("training and validation sets must be non-empty")
    if model is None:
        model = EncoderDecoder(model_spec, seed=config.seed, dtype=dtype)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(config.seed)
    replicas = [model.replica() for _ in range(config.workers)]
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    n = len(data.x_train)
    best_val, best_epoch, best_weights = np.inf, 0, model.get_weights()
    history = []
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            losses, sizes = [], []
            for b, start in enumerate(range(0, n, config.batch_size)):
                idx = order[start : start + config.batch_size]
                n_chunks = int(np.ceil(len(idx) / config.micro_batch))
                seeds = [[config.seed, epoch, b, c] for c in range(n_chunks)]
                loss, grads = _batch_gradients(model, replicas, data.x_train[idx], data.y_train[idx], seeds, pool)
                adam_step(state, params, grads, epoch, config)
                losses.append(loss)
                sizes.append(len(idx))
            train_loss = float(np.average(losses, weights=sizes))
            val_loss = evaluate_loss(model, data.x_val, data.y_val)
            history.append({"epoch": epoch, "lr": learning_rate(epoch, config), "train_loss": train_loss, "val_loss": val_loss})
            if log is not None:
                log(history[-1])
            if val_loss < best_val:
                best_val, best_epoch, best_weights = val_loss, epoch, model.get_weights()
    finally:
        if pool is not None:
            pool.shutdown()
    model.set_weights(best_weights)
    return TrainResult(model, history, best_epoch)


class BaselineMean:
    """Predicts the per-pixel mean of the training targets for any input."""

    def __init__(self, targets):
        targets = np.asarray(targets, dtype=np.float64)
        if len(targets) == 0:
            raise DomainError("baseline needs at least one target")
        self.mean = targets.mean(axis=0)

    def predict(self, x):
        return np.broadcast_to(self.mean, (len(x),) + self.mean.shape).copy()


def baseline_mean(targets) -> BaselineMean:
    return BaselineMean(targets)
