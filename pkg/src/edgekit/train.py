"""SGD training loop threading the epoch index into the dynamic loss.

The optimizer keeps one velocity buffer per parameter:
``v <- momentum*v + (grad + weight_decay*param)``, then
``param <- param - lr*v``. Sample order is a seeded per-epoch shuffle,
so a fixed seed reproduces the run exactly; the per-epoch log records
``epoch,mean_loss,seconds``. A checkpoint is written at the end and
whenever the validation loss (training loss if no validation set is
given) reaches a new best.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from edgekit.data import Sample, consensus_gt
from edgekit.losses import LossConfig, supervision_loss, threshold_gt
from edgekit.model import EdgeNet, save_checkpoint
from edgekit.tensor import Tensor, backward

__all__ = ["SGD", "TrainConfig", "TrainResult", "train"]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 2e-4
    epochs: int = 1
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    batch: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


class SGD:
    """Momentum SGD with decoupled-from-nothing, classic L2 weight decay."""

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            grad = np.zeros_like(p.data) if p.grad is None else p.grad
            if grad.shape != p.data.shape:
                raise ValueError(f"gradient shape {grad.shape} does not match parameter {p.data.shape}")
            v *= self.momentum
            v += grad + self.weight_decay * p.data
            p.data = p.data - self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class TrainResult:
    mean_losses: list[float]
    epoch_seconds: list[float]
    final_path: str
    best_path: str
    log_path: str


def _labels_for(sample: Sample, gamma_gt: float):
    return threshold_gt(consensus_gt(sample.gt_maps), gamma_gt)


def _dataset_loss(model: EdgeNet, samples, labels, cfg: TrainConfig, epoch: int) -> float:
    total = 0.0
    for sample, lab in zip(samples, labels):
        pred = model.forward(Tensor(sample.image[None]))
        total += float(supervision_loss(pred.side_probs, pred.fused_prob, lab, cfg.loss, epoch))
    return total / len(samples)


def train(
    model: EdgeNet,
    samples: list[Sample],
    cfg: TrainConfig,
    out_dir: str,
    val_samples: list[Sample] | None = None,
) -> TrainResult:
    """Run the full loop; epoch ``e`` passes exactly ``e`` to the loss."""
    if not samples:
        raise ValueError("train needs at least one sample")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    labels = [_labels_for(s, cfg.loss.gamma_gt) for s in samples]
    val_labels = [_labels_for(s, cfg.loss.gamma_gt) for s in val_samples] if val_samples else None

    final_path = os.path.join(out_dir, "final.ckpt")
    best_path = os.path.join(out_dir, "best.ckpt")
    log_path = os.path.join(out_dir, "log.csv")

    mean_losses: list[float] = []
    epoch_seconds: list[float] = []
    best_loss = np.inf
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(samples))
        total = 0.0
        for idx in order:
            sample = samples[idx]
            pred = model.forward(Tensor(sample.image[None]))
            loss = supervision_loss(pred.side_probs, pred.fused_prob, labels[idx], cfg.loss, epoch)
            value = float(loss)
            if not np.isfinite(value):
                raise RuntimeError(f"non-finite loss at sample {sample.id!r} (epoch {epoch})")
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += value
        mean_losses.append(total / len(samples))
        epoch_seconds.append(time.perf_counter() - t0)

        track = (
            _dataset_loss(model, val_samples, val_labels, cfg, epoch)
            if val_samples
            else mean_losses[-1]
        )
        if track < best_loss:
            best_loss = track
            save_checkpoint(model, best_path)

    save_checkpoint(model, final_path)
    with open(log_path, "w") as fh:
        fh.write("epoch,mean_loss,seconds\n")
        for e, (ml, sec) in enumerate(zip(mean_losses, epoch_seconds)):
            fh.write(f"{e},{ml:.8f},{sec:.3f}\n")
    return TrainResult(
        mean_losses=mean_losses,
        epoch_seconds=epoch_seconds,
        final_path=final_path,
        best_path=best_path,
        log_path=log_path,
    )
