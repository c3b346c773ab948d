"""From-scratch NNUE trainer: mini-batch gradient descent with momentum on
the mean squared error between the network output and the logistic-mapped
centipawn label.

Internals run in float64 (so analytic gradients check cleanly against
finite differences); the returned model is cast to the float32 inference
format.  Training is deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nnue import (DEFAULT_WDL_SCALE, HIDDEN, FeatureSet, NnueModel,
                   encode_batch)


class DivergenceError(RuntimeError):
    """Training loss went non-finite."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 1024
    epochs: int = 40
    wdl_scale: float = DEFAULT_WDL_SCALE
    seed: int = 0
    validation_fraction: float = 0.1
    momentum: float = 0.9
    lr_decay: float = 0.5
    plateau_patience: int = 3

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 \
                or self.epochs <= 0 or self.wdl_scale <= 0:
            raise ValueError("learning rate, batch size, epochs and "
                             "wdl scale must be positive")
        if not (0.0 < self.validation_fraction <= 0.5):
            raise ValueError("validation fraction must be in (0, 0.5]")


def _params_from_model(model: NnueModel) -> dict[str, np.ndarray]:
    return {"ft_w": model.ft_w.astype(np.float64),
            "ft_b": model.ft_b.astype(np.float64),
            "out_w": model.out_w.astype(np.float64),
            "out_b": np.array([model.out_b], dtype=np.float64)}


def _model_from_params(params, feature_set: FeatureSet) -> NnueModel:
    return NnueModel(feature_set, params["ft_w"].astype(np.float32),
                     params["ft_b"].astype(np.float32),
                     params["out_w"].astype(np.float32),
                     float(params["out_b"][0]))


def _forward_batch(params, idx, mask, stm):
    """Batched forward pass.

    idx: (N, 2, 32) int feature indices padded with -1; mask: matching 0/1
    float array; stm: (N,) side to move.  Returns (y, cache).
    """
    gathered = params["ft_w"][np.maximum(idx, 0)] * mask[..., None]
    acc = gathered.sum(axis=2) + params["ft_b"]      # (N, 2, 128)
    n = idx.shape[0]
    rows = np.arange(n)
    own = acc[rows, stm]
    opp = acc[rows, 1 - stm]
    pre = np.concatenate([own, opp], axis=1)         # (N, 256)
    h = np.clip(pre, 0.0, 1.0)
    z = h @ params["out_w"] + params["out_b"][0]
    y = 1.0 / (1.0 + np.exp(-z))
    return y, (pre, h, y)


def loss_and_grads(params, idx, mask, stm, targets):
    """Mean squared error on a batch plus analytic gradients for every
    parameter.  The clamp derivative is 1 on [0, 1] (boundaries included)
    and 0 outside."""
    n = idx.shape[0]
    y, (pre, h, y_) = _forward_batch(params, idx, mask, stm)
    diff = y - targets
    loss = float(np.mean(diff ** 2))
    g_z = (2.0 / n) * diff * y * (1.0 - y)           # (N,)
    g_out_w = h.T @ g_z
    g_out_b = np.array([g_z.sum()])
    g_h = g_z[:, None] * params["out_w"][None, :]
    g_pre = np.where((pre >= 0.0) & (pre <= 1.0), g_h, 0.0)
    g_acc = np.empty((n, 2, HIDDEN))
    rows = np.arange(n)
    g_acc[rows, stm] = g_pre[:, :HIDDEN]
    g_acc[rows, 1 - stm] = g_pre[:, HIDDEN:]
    g_ft_b = g_acc.sum(axis=(0, 1))
    g_ft_w = np.zeros_like(params["ft_w"])
    contrib = g_acc[:, :, None, :] * mask[..., None]   # (N, 2, 32, 128)
    np.add.at(g_ft_w, np.maximum(idx, 0).ravel(),
              contrib.reshape(-1, HIDDEN))
    return loss, {"ft_w": g_ft_w, "ft_b": g_ft_b,
                  "out_w": g_out_w, "out_b": g_out_b}


def _mse(params, idx, mask, stm, targets, batch_size=8192):
    total = 0.0
    n = idx.shape[0]
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        y, _ = _forward_batch(params, idx[lo:hi], mask[lo:hi], stm[lo:hi])
        total += float(np.sum((y - targets[lo:hi]) ** 2))
    return total / n


def prepare_tensors(boards, stms, labels, feature_set: FeatureSet,
                    wdl_scale: float):
    """Encode packed positions into training tensors."""
    idx, cnt = encode_batch(boards, feature_set)
    mask = (idx >= 0).astype(np.float64)
    stm = np.asarray(stms, dtype=np.int64)
    targets = 1.0 / (1.0 + np.exp(-np.asarray(labels, np.float64)
                                  / wdl_scale))
    return idx.astype(np.int64), mask, stm, targets


def train(boards, stms, labels, config: TrainConfig | None = None,
          feature_set: FeatureSet | None = None, log_path=None,
          verbose: bool = False):
    """Train a model on packed positions (N, 90) with centipawn labels.

    Returns (model with the best validation MSE, per-epoch log of
    (epoch, train_mse, val_mse)).  Writes a CSV log when log_path is given.
    """
    config = config or TrainConfig()
    fs = feature_set or FeatureSet()
    boards = np.asarray(boards)
    n = boards.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    idx, mask, stm, targets = prepare_tensors(boards, stms, labels, fs,
                                              config.wdl_scale)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * config.validation_fraction)))
    if n_val >= n:
        raise ValueError("dataset too small for the validation split")
    val, trn = order[:n_val], order[n_val:]

    model0 = NnueModel.random_init(fs, seed=config.seed)
    params = _params_from_model(model0)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    lr = config.learning_rate
    best_val = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    stale = 0
    log = []
    for epoch in range(1, config.epochs + 1):
        perm = trn[rng.permutation(len(trn))]
        train_loss = 0.0
        for lo in range(0, len(perm), config.batch_size):
            b = perm[lo:lo + config.batch_size]
            loss, grads = loss_and_grads(params, idx[b], mask[b], stm[b],
                                         targets[b])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, lr={lr}")
            train_loss += loss * len(b)
            for k in params:
                velocity[k] = config.momentum * velocity[k] - lr * grads[k]
                params[k] += velocity[k]
        train_mse = train_loss / len(perm)
        val_mse = _mse(params, idx[val], mask[val], stm[val], targets[val])
        if not np.isfinite(val_mse):
            raise DivergenceError(f"non-finite validation MSE at {epoch}")
        log.append((epoch, train_mse, val_mse))
        if verbose:
            print(f"epoch {epoch:3d}  train_mse {train_mse:.6f}  "
                  f"val_mse {val_mse:.6f}  lr {lr:g}")
        if val_mse < best_val - 1e-12:
            best_val = val_mse
            best_params = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                lr *= config.lr_decay
                stale = 0
    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write("epoch,train_mse,val_mse\n")
            for epoch, tm, vm in log:
                fh.write(f"{epoch},{tm:.8f},{vm:.8f}\n")
    return _model_from_params(best_params, fs), log
