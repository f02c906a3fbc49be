"""Conventional minibatch training of the same architecture, for comparison.

Shares :mod:`flnn.network` for the forward pass, loss and accuracy, so curves
from this trainer and the alternating trainers measure exactly the same
quantities; only the update rule differs. Gradients come from a hand-rolled
reverse pass over the recursion.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .bcd import ReportRow, TrainReport
from .data import Dataset, batches
from .divergence import ActivationKind
from .kernels import softmax_cols
from .network import (
    Loss,
    NetworkSpec,
    Weights,
    accuracy,
    augment,
    feed_forward,
    standard_objective,
)


class Optimizer(Enum):
    SGD = "sgd"
    ADAM = "adam"


_DEFAULT_LR = {Optimizer.SGD: 1e-2, Optimizer.ADAM: 1e-3}


@dataclass
class SgdConfig:
    optimizer: Optimizer = Optimizer.SGD
    learning_rate: float | None = None  # None: 1e-2 for SGD, 1e-3 for Adam
    epochs: int = 10
    batch_size: int = 500
    seed: int = 0
    rho: float = 0.0

    @property
    def lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else _DEFAULT_LR[self.optimizer]


def _activation_derivative(kind: ActivationKind, act: np.ndarray) -> np.ndarray:
    """phi' recovered from the activation values (enough for ReLU and sigmoid)."""
    if kind is ActivationKind.SIGMOID:
        return act * (1.0 - act)
    return (act > 0.0).astype(np.float64)  # the quadratic baselines forward as ReLU


def backprop_gradient(spec: NetworkSpec, w: Weights, X, Y, rho=0.0) -> list[np.ndarray]:
    """Exact gradient of the standard objective (summed loss + weight decay)
    restricted to the given batch, one array per weight matrix."""
    rho_vec = np.atleast_1d(np.asarray(rho, dtype=np.float64))
    if rho_vec.size == 1:
        rho_vec = np.full(spec.hidden_layers + 1, float(rho_vec[0]))
    acts, pred = feed_forward(spec, w, X)
    if spec.loss is Loss.MSE:
        G = 2.0 * (pred - Y)
    else:
        G = softmax_cols(pred) - Y
    grads: list[np.ndarray] = [None] * (spec.hidden_layers + 1)
    for l in range(spec.hidden_layers, -1, -1):
        grads[l] = G @ augment(acts[l]).T + 2.0 * rho_vec[l] * w.mats[l]
        if l > 0:
            G = (w.mats[l][:, :-1].T @ G) * _activation_derivative(
                spec.activations[l - 1], acts[l]
            )
    return grads


def train_baseline(
    spec: NetworkSpec,
    data: Dataset,
    cfg: SgdConfig,
    test_data: Dataset | None = None,
    metrics_every: int = 10,
):
    """Minibatch SGD or Adam on the standard objective.

    Update steps use the per-sample mean gradient (the conventional scaling
    the default learning rates assume). Training aborts with a warning in the
    report if the objective stops being finite. Returns ``(weights, report)``.
    """
    if cfg.batch_size > data.num_cols:
        raise ValueError("batch_size exceeds dataset size")
    w = Weights.init_gaussian(spec, cfg.seed)
    lr = cfg.lr
    method = cfg.optimizer.value
    report = TrainReport(method=method)
    test_idx = test_data.label_indices if test_data is not None else None

    if cfg.optimizer is Optimizer.ADAM:
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        mom = [np.zeros_like(W) for W in w.mats]
        vel = [np.zeros_like(W) for W in w.mats]
        t_step = 0

    t0 = time.perf_counter()
    test_acc = float("nan")
    global_batch = 0
    for epoch in range(1, cfg.epochs + 1):
        slices = batches(data, cfg.batch_size, cfg.seed, epoch)
        for bi, idx in enumerate(slices):
            idx = np.sort(idx)
            Xb = data.inputs[:, idx]
            Yb = data.labels[:, idx]
            grads = backprop_gradient(spec, w, Xb, Yb, cfg.rho)
            scale = 1.0 / Xb.shape[1]
            if cfg.optimizer is Optimizer.SGD:
                for W, g in zip(w.mats, grads):
                    W -= lr * scale * g
            else:
                t_step += 1
                corr1 = 1.0 - beta1**t_step
                corr2 = 1.0 - beta2**t_step
                for W, g, m, v in zip(w.mats, grads, mom, vel):
                    g = scale * g
                    m *= beta1
                    m += (1.0 - beta1) * g
                    v *= beta2
                    v += (1.0 - beta2) * (g * g)
                    W -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
            global_batch += 1
            std = standard_objective(spec, w, Xb, Yb, cfg.rho)
            if not np.isfinite(std):
                report.warnings.append(
                    f"objective diverged at epoch {epoch} batch {bi}; stopping"
                )
                report.rows.append(
                    ReportRow(epoch, bi, float("nan"), std, float("nan"), test_acc,
                              time.perf_counter() - t0)
                )
                return w, report
            train_acc = accuracy(spec, w, Xb, np.argmax(Yb, axis=0))
            last = epoch == cfg.epochs and bi == len(slices) - 1
            if test_data is not None and (
                global_batch % metrics_every == 0 or bi == len(slices) - 1 or last
            ):
                test_acc = accuracy(spec, w, test_data.inputs, test_idx)
            report.rows.append(
                ReportRow(epoch, bi, float("nan"), std, train_acc, test_acc,
                          time.perf_counter() - t0)
            )
    return w, report
