"""Deterministic single-threaded training loop with Adam updates.

One optimizer step per full sequence; the segment partitions are recomputed
from the proposal stack once per epoch, before any of that epoch's updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import blocks, model as model_mod
from .autodiff import Tensor
from .errors import ConfigError, DivergenceError, NumericsError
from .model import HidSsmModel, backward, forward, make_targets

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DIVERGENCE_THRESHOLD = 1e6


class AdamOptimizer:
    """Adam with bias correction; state is keyed by parameter name."""

    def __init__(self, lr: float, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 eps: float = ADAM_EPS):
        if lr < 0:
            raise ConfigError("learning rate must be non-negative")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, tensor in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(tensor.value))
            v = self.v.setdefault(name, np.zeros_like(tensor.value))
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            tensor.value = tensor.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainReport:
    epochs_run: int
    epoch_losses: list[float] = field(default_factory=list)
    val_relaxed_accuracy: list[float] = field(default_factory=list)
    final_loss: float = float("nan")
    diverged: bool = False
    divergence_message: str = ""


def train(
    model: HidSsmModel,
    train_set: list[tuple[np.ndarray, np.ndarray]],
    epochs: int,
    lr: float,
    alpha: float,
    eval_hook=None,
) -> TrainReport:
    """Optimize ``model`` in place over (features, labels) pairs.

    ``eval_hook`` (optional) is called after each epoch and should return a
    scalar validation metric to record. Sequences are visited in dataset
    order; with a fixed initialization the whole trajectory is reproducible
    bit for bit.
    """
    if not train_set:
        raise ConfigError("training set must be non-empty")
    targets = [make_targets(labels) for _, labels in train_set]
    optimizer = AdamOptimizer(lr)
    params = model.parameters()
    report = TrainReport(epochs_run=0)
    for epoch in range(epochs):
        partitions = [
            blocks.ppn_segments(
                forward(model, feats).ppn_logits.value, model.min_segment_len
            )
            for feats, _ in train_set
        ]
        losses = []
        for (feats, _), target, partition in zip(train_set, targets, partitions):
            try:
                bundle = backward(model, feats, target, alpha, partition=partition)
            except NumericsError as exc:
                report.diverged = True
                report.divergence_message = str(exc)
                report.epochs_run = epoch
                err = DivergenceError(f"aborted at epoch {epoch}: {exc}")
                err.report = report
                raise err from exc
            if not np.isfinite(bundle.loss_value) or bundle.loss_value > DIVERGENCE_THRESHOLD:
                report.diverged = True
                report.divergence_message = f"loss {bundle.loss_value} at epoch {epoch}"
                report.epochs_run = epoch
                err = DivergenceError(report.divergence_message)
                err.report = report
                raise err
            optimizer.step(params, bundle.grads)
            losses.append(bundle.loss_value)
        report.epoch_losses.append(float(np.mean(losses)))
        if eval_hook is not None:
            report.val_relaxed_accuracy.append(float(eval_hook(model)))
        report.epochs_run = epoch + 1
    report.final_loss = report.epoch_losses[-1] if report.epoch_losses else float("nan")
    return report


def predict(model: HidSsmModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame phase predictions and progress estimates for one sequence."""
    result = forward(model, features)
    return np.argmax(result.logits.value, axis=1), result.progress.value


def progress_mse(model: HidSsmModel, dataset: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean squared progress error over every frame of a dataset."""
    errs = []
    for feats, labels in dataset:
        result = forward(model, feats)
        target = model_mod.progress_targets(labels)
        errs.append((result.progress.value - target) ** 2)
    return float(np.mean(np.concatenate(errs)))
