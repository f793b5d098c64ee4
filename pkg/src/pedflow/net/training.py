"""Adam training loop with a plateau scheduler and seeded splits.

Deterministic end to end: the seed fixes the parameter init, the
train/validation split and every epoch's batch order, so loss curves
reproduce bitwise for a given dataset, config and kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyDataset, NonFiniteLoss
from .model import forward, loss_and_grads
from .params import ModelConfig, ModelParams


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lam_pos: float = 1.0
    lam_edge: float = 1.0
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-7
    val_fraction: float = 0.1
    seed: int = 0


class AdamState:
    def __init__(self, params: ModelParams, beta1: float, beta2: float, eps: float):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: ModelParams, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params.tensors[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class ReduceLROnPlateau:
    """Halve (by factor) when validation loss stops improving by a
    relative threshold for patience epochs."""

    def __init__(self, lr: float, factor: float, patience: int,
                 threshold: float, min_lr: float):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = math.inf
        self.bad = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best * (1.0 - self.threshold):
            self.best = val_loss
            self.bad = 0
        else:
            self.bad += 1
            if self.bad > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad = 0
        return self.lr


@dataclass
class TrainResult:
    params: ModelParams
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr_history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    train_indices: np.ndarray | None = None
    val_indices: np.ndarray | None = None


def split_indices(n: int, val_fraction: float, rng) -> tuple:
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise ValueError(f"dataset of {n} samples cannot spare a validation split")
    return perm[n_val:], perm[:n_val]


def _validation_loss(params: ModelParams, dataset, idx, cfg: TrainConfig,
                     chunk: int = 256) -> float:
    total = 0.0
    for k in range(0, len(idx), chunk):
        sub = idx[k:k + chunk]
        batch = dataset.batch(sub)
        pred, _ = forward(params, batch, need_cache=False)
        err = pred.delta_p - batch["target_dp"]
        pos = float((err ** 2).mean())
        logits = pred.edge_logits
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        tgt = np.asarray(batch["target_edge"], dtype=np.int64)
        nll = float(-(logits[np.arange(len(sub)), tgt] - lse).mean())
        total += (cfg.lam_pos * pos + cfg.lam_edge * nll) * len(sub)
    return total / len(idx)


def train(dataset, model_config: ModelConfig, config: TrainConfig = TrainConfig(),
          callback=None) -> TrainResult:
    """Fit a fresh model on dataset (an object with .n and .batch(idx)).

    Returns the parameters from the epoch with the lowest validation
    loss, plus the full loss/lr history.
    """
    if dataset.n == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    root = np.random.SeedSequence(config.seed)
    seed_init, seed_split, seed_shuffle = root.spawn(3)
    params = ModelParams.init(model_config, seed_init)
    train_idx, val_idx = split_indices(dataset.n, config.val_fraction,
                                       np.random.default_rng(seed_split))
    shuffler = np.random.default_rng(seed_shuffle)
    adam = AdamState(params, config.beta1, config.beta2, config.adam_eps)
    plateau = ReduceLROnPlateau(config.lr, config.plateau_factor,
                                config.plateau_patience,
                                config.plateau_threshold, config.min_lr)
    result = TrainResult(params=params, train_indices=train_idx, val_indices=val_idx)
    best_params = params.copy()
    lr = config.lr
    for epoch in range(config.epochs):
        order = shuffler.permutation(train_idx)
        running = 0.0
        seen = 0
        for k in range(0, len(order), config.batch_size):
            sub = order[k:k + config.batch_size]
            batch = dataset.batch(sub)
            loss, grads, _ = loss_and_grads(params, batch, config.lam_pos,
                                            config.lam_edge)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}, batch at {k}: loss={loss}")
            adam.step(params, grads, lr)
            running += loss * len(sub)
            seen += len(sub)
        train_loss = running / seen
        val_loss = _validation_loss(params, dataset, val_idx, config)
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(f"epoch {epoch}: validation loss={val_loss}")
        result.train_loss.append(train_loss)
        result.val_loss.append(val_loss)
        result.lr_history.append(lr)
        if val_loss < result.best_val:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_params = params.copy()
        lr = plateau.step(val_loss)
        if callback is not None:
            callback(epoch, train_loss, val_loss, lr)
    result.params = best_params
    return result


def evaluate(params: ModelParams, dataset, idx=None, chunk: int = 256) -> dict:
    """Held-out metrics: mean euclidean displacement error (meters) and
    next-edge accuracy, plus the raw loss terms."""
    if idx is None:
        idx = np.arange(dataset.n)
    idx = np.asarray(idx)
    if len(idx) == 0:
        raise EmptyDataset("nothing to evaluate")
    pos_err_sum = 0.0
    pos_sq_sum = 0.0
    nll_sum = 0.0
    correct = 0
    for k in range(0, len(idx), chunk):
        sub = idx[k:k + chunk]
        batch = dataset.batch(sub)
        pred, _ = forward(params, batch, need_cache=False)
        err = pred.delta_p - batch["target_dp"]
        pos_err_sum += float(np.linalg.norm(err, axis=1).sum())
        pos_sq_sum += float((err ** 2).sum())
        logits = pred.edge_logits
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        tgt = np.asarray(batch["target_edge"], dtype=np.int64)
        nll_sum += float(-(logits[np.arange(len(sub)), tgt] - lse).sum())
        correct += int((pred.edge_argmax == tgt).sum())
    n = len(idx)
    return {
        "mean_pos_err": pos_err_sum / n,
        "pos_mse": pos_sq_sum / (2 * n),
        "edge_acc": correct / n,
        "edge_nll": nll_sum / n,
        "n": n,
    }
