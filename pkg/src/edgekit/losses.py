"""Class-balanced edge losses: weighted CE, focal, and dynamic focal.

All three share one fused, numerically stable core over probability maps.
Pixels are labeled EDGE / NONEDGE / IGNORE; ignored pixels contribute
exactly zero to both value and gradient. Class weights follow the usual
edge-detection convention: the rare edge class is weighted by
``lam * n_nonedge / n_labeled`` and the non-edge class by
``n_edge / n_labeled``.

The focal weight is ``(1-p)**gamma`` on edges and ``p**gamma`` elsewhere.
The dynamic variant blends it with uniform weighting on an epoch
schedule: ``w' = (mu + epoch * w) / (epoch + mu)``, i.e. a convex
combination of 1 and ``w`` with mixing weight ``epoch / (epoch + mu)``.
At epoch 0 (or ``gamma == 0``) it coincides exactly with weighted CE; as
``mu -> 0`` with ``epoch >= 1`` it approaches the plain focal loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from edgekit.tensor import Tensor, _node, add

__all__ = [
    "EDGE",
    "IGNORE",
    "LabelMap",
    "LossConfig",
    "NONEDGE",
    "class_weights",
    "dynamic_focal",
    "dynamic_weight",
    "focal",
    "focal_weight",
    "supervision_loss",
    "threshold_gt",
    "wce",
]

EDGE = 1
NONEDGE = 0
IGNORE = -1

LOG_FLOOR = 1e-12


@dataclass
class LabelMap:
    """Per-pixel labels in {EDGE, NONEDGE, IGNORE} with class counts."""

    labels: np.ndarray  # int8 [H, W]

    @property
    def n_edge(self) -> int:
        return int((self.labels == EDGE).sum())

    @property
    def n_nonedge(self) -> int:
        return int((self.labels == NONEDGE).sum())

    @property
    def n_ignore(self) -> int:
        return int((self.labels == IGNORE).sum())

    @property
    def shape(self) -> tuple[int, ...]:
        return self.labels.shape


@dataclass
class LossConfig:
    kind: str = "dfl"  # wce | fl | dfl
    lam: float = 1.1
    gamma_focal: float = 1.0
    mu: float = 0.5
    gamma_gt: float = 0.3

    def __post_init__(self):
        if self.kind not in ("wce", "fl", "dfl"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.gamma_focal < 0 or self.mu < 0:
            raise ValueError("gamma_focal and mu must be >= 0")
        if not 0.0 <= self.gamma_gt < 1.0:
            raise ValueError("gamma_gt must lie in [0, 1)")


def threshold_gt(gt: np.ndarray, gamma_gt: float = 0.3) -> LabelMap:
    """Label pixels from a fractional ground truth.

    EDGE where the annotator fraction exceeds ``gamma_gt``, NONEDGE where
    it is exactly zero, IGNORE (disputed) in between. Binary ground truth
    therefore never produces IGNORE pixels for any ``gamma_gt < 1``.
    """
    if gt.min() < 0.0 or gt.max() > 1.0:
        raise ValueError("ground truth values must lie in [0, 1]")
    labels = np.full(gt.shape, IGNORE, dtype=np.int8)
    labels[gt > gamma_gt] = EDGE
    labels[gt == 0.0] = NONEDGE
    return LabelMap(labels)


def class_weights(labels: LabelMap, lam: float) -> tuple[float, float]:
    """(edge weight, non-edge weight); the weight of an absent class is 0."""
    n_pos, n_neg = labels.n_edge, labels.n_nonedge
    total = n_pos + n_neg
    if total == 0:
        return 0.0, 0.0
    return lam * n_neg / total, n_pos / total


def focal_weight(p: np.ndarray, labels: LabelMap, gamma: float) -> np.ndarray:
    """Per-pixel focal factor; 1 on ignored pixels."""
    if gamma == 0:
        return np.ones_like(p)
    lab = labels.labels
    w = np.ones_like(p)
    edge = lab == EDGE
    non = lab == NONEDGE
    w[edge] = (1.0 - p[edge]) ** gamma
    w[non] = p[non] ** gamma
    return w


def dynamic_weight(
    p: np.ndarray, labels: LabelMap, gamma: float, mu: float, epoch: int
) -> np.ndarray:
    """Epoch-scheduled focal factor ``(mu + epoch*w) / (epoch + mu)``."""
    if mu < 0 or epoch < 0:
        raise ValueError("mu and epoch must be >= 0")
    if mu == 0 and epoch == 0:
        raise ValueError("dynamic weight undefined for mu == 0 and epoch == 0")
    mix = epoch / (epoch + mu)
    return (1.0 - mix) + mix * focal_weight(p, labels, gamma)


def _balanced_loss(pred: Tensor, labels: LabelMap, lam: float, gamma: float, mix: float) -> Tensor:
    """Fused weighted-CE node with optional focal factor blended in by ``mix``."""
    if pred.size != labels.labels.size:
        raise ValueError(f"prediction shape {pred.shape} does not match labels {labels.shape}")
    p = pred.data.reshape(labels.shape)
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("predictions must lie in [0, 1]")
    lab = labels.labels
    edge = lab == EDGE
    non = lab == NONEDGE
    alpha, beta = class_weights(labels, lam)

    pc = np.clip(p, LOG_FLOOR, None)
    qc = np.clip(1.0 - p, LOG_FLOOR, None)
    log_p = np.log(pc)
    log_q = np.log(qc)

    plain = gamma == 0 or mix == 0
    if plain:
        omega = np.ones_like(p)
    else:
        base = np.where(edge, 1.0 - p, p)
        omega = (1.0 - mix) + mix * np.clip(base, 0.0, None) ** gamma
        omega = np.where(edge | non, omega, 1.0).astype(p.dtype, copy=False)

    per = np.zeros_like(p)
    per[edge] = -alpha * (omega * log_p)[edge]
    per[non] = -beta * (omega * log_q)[non]
    total = per.sum()

    def backward_fn(g):
        if not pred.requires_grad:
            return (None,)
        dlog_p = np.where(p > LOG_FLOOR, 1.0 / pc, 0.0)
        dlog_q = np.where(1.0 - p > LOG_FLOOR, 1.0 / qc, 0.0)
        if plain:
            domega = np.zeros_like(p)
        else:
            base = np.clip(np.where(edge, 1.0 - p, p), LOG_FLOOR, None)
            domega = mix * gamma * base ** (gamma - 1.0)
            domega = np.where(edge, -domega, domega)
        dper = np.zeros_like(p)
        dper[edge] = -alpha * (domega * log_p + omega * dlog_p)[edge]
        dper[non] = -beta * (domega * log_q - omega * dlog_q)[non]
        return ((g * dper).reshape(pred.shape).astype(pred.dtype, copy=False),)

    return _node(np.asarray(total), (pred,), backward_fn)


def wce(pred: Tensor, labels: LabelMap, lam: float = 1.1) -> Tensor:
    """Class-balanced cross entropy summed over labeled pixels."""
    return _balanced_loss(pred, labels, lam, gamma=0.0, mix=0.0)


def focal(pred: Tensor, labels: LabelMap, lam: float = 1.1, gamma: float = 1.0) -> Tensor:
    """Weighted CE with the focal factor applied at full strength."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return _balanced_loss(pred, labels, lam, gamma=gamma, mix=1.0)


def dynamic_focal(
    pred: Tensor,
    labels: LabelMap,
    lam: float = 1.1,
    gamma: float = 1.0,
    mu: float = 0.5,
    epoch: int = 0,
) -> Tensor:
    """Focal loss whose confidence in the model grows with the epoch index."""
    if gamma < 0 or mu < 0 or epoch < 0:
        raise ValueError("gamma, mu, and epoch must be >= 0")
    if mu == 0 and epoch == 0:
        raise ValueError("dynamic focal loss undefined for mu == 0 and epoch == 0")
    mix = epoch / (epoch + mu)
    return _balanced_loss(pred, labels, lam, gamma=gamma, mix=mix)


def single_map_loss(pred: Tensor, labels: LabelMap, cfg: LossConfig, epoch: int) -> Tensor:
    if cfg.kind == "wce":
        return wce(pred, labels, cfg.lam)
    if cfg.kind == "fl":
        return focal(pred, labels, cfg.lam, cfg.gamma_focal)
    return dynamic_focal(pred, labels, cfg.lam, cfg.gamma_focal, cfg.mu, epoch)


def supervision_loss(
    side_probs: list[Tensor],
    fused_prob: Tensor,
    labels: LabelMap,
    cfg: LossConfig,
    epoch: int = 0,
) -> Tensor:
    """Deeply supervised total: the configured loss on every map, weight 1 each."""
    total = None
    for pred in list(side_probs) + [fused_prob]:
        if pred.shape[-2:] != labels.shape:
            raise ValueError(f"map resolution {pred.shape} does not match labels {labels.shape}")
        term = single_map_loss(pred, labels, cfg, epoch)
        total = term if total is None else add(total, term)
    return total
