"""Adaptive class-balanced focal loss and its plain cross-entropy ablation.

Per sample with true class ``t``::

    L = alpha[t] * (1 - p_t) ** gamma * (-log p_t)

where ``alpha[i] = N_max / N_i`` from training-set class counts. With
``gamma = 0`` and ``alpha = 1`` this is ordinary cross-entropy.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, MissingClassError
from .nn import log_softmax, softmax

N_CLASSES = 3
PROB_FLOOR = 1e-12

ADAPTIVE_FOCAL = "adaptive-focal"
CROSS_ENTROPY = "cross-entropy"


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    alpha: tuple = (1.0, 1.0, 1.0)
    mode: str = ADAPTIVE_FOCAL

    def __post_init__(self):
        if self.mode not in (ADAPTIVE_FOCAL, CROSS_ENTROPY):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        if len(self.alpha) != N_CLASSES or any(not a > 0 for a in self.alpha):
            raise ValueError(f"alpha must be {N_CLASSES} positive weights, got {self.alpha}")
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))

    @classmethod
    def adaptive(cls, counts, gamma=2.0):
        return cls(gamma=gamma, alpha=tuple(class_weights(counts)), mode=ADAPTIVE_FOCAL)

    @classmethod
    def plain(cls):
        return cls(gamma=0.0, alpha=(1.0, 1.0, 1.0), mode=CROSS_ENTROPY)

    def effective(self):
        """(gamma, alpha array) actually applied; CE mode ignores both."""
        if self.mode == CROSS_ENTROPY:
            return 0.0, np.ones(N_CLASSES)
        return float(self.gamma), np.asarray(self.alpha, dtype=np.float64)


def class_weights(counts):
    """``alpha_i = N_max / N_i``; the most frequent class gets exactly 1."""
    counts = np.asarray(counts)
    if counts.shape != (N_CLASSES,):
        raise DimensionError(f"expected {N_CLASSES} class counts, got shape {counts.shape}")
    for label, n in enumerate(counts):
        if n < 1:
            raise MissingClassError(f"class {label} has no samples; cannot weight it", label)
    return counts.max() / counts.astype(np.float64)


def _targets(y, n_rows):
    """Accept integer labels or one-hot rows; return integer labels."""
    y = np.asarray(y)
    if y.ndim >= 1 and y.shape[-1] == N_CLASSES and y.size == N_CLASSES * n_rows:
        rows = y.reshape(-1, N_CLASSES)
        if not (np.all((rows == 0) | (rows == 1)) and np.all(rows.sum(axis=1) == 1)):
            raise DataError("labels must be one-hot; soft labels are not supported")
        labels = rows.argmax(axis=1)
    else:
        labels = y.reshape(-1).astype(np.int64)
    if labels.size != n_rows:
        raise DimensionError(f"{labels.size} labels for {n_rows} predictions")
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise DataError(f"labels must lie in [0, {N_CLASSES})")
    return labels


def focal_losses(probs, y, cfg):
    """Per-sample losses for a (n, 3) probability batch.

    Returns ``(losses, n_clamped)`` where ``n_clamped`` counts samples whose
    true-class probability was raised to ``PROB_FLOOR`` before the log.
    """
    P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = _targets(y, P.shape[0])
    gamma, alpha = cfg.effective()
    p_t = P[np.arange(P.shape[0]), labels]
    clamped = p_t < PROB_FLOOR
    p_t = np.where(clamped, PROB_FLOOR, p_t)
    losses = alpha[labels] * (1.0 - p_t) ** gamma * -np.log(p_t)
    return losses, int(clamped.sum())


def focal_loss(probs, y, cfg):
    """Loss of a single sample (``probs`` of shape (3,))."""
    losses, _ = focal_losses(probs, y, cfg)
    return float(losses[0])


def batch_loss(probs_batch, y_batch, cfg):
    """Mean per-sample loss over a non-empty batch."""
    P = np.asarray(probs_batch, dtype=np.float64)
    if P.size == 0:
        raise DataError("batch_loss of an empty batch")
    return float(focal_losses(P, y_batch, cfg)[0].mean())


def focal_loss_grad(logits, y, cfg):
    """d loss / d logits for one sample or a (n, 3) batch (no averaging).

    With ``g = alpha_t * (gamma (1-p_t)^(gamma-1) p_t log p_t - (1-p_t)^gamma)``
    the gradient is ``g * (onehot - p)``.
    """
    Z = np.asarray(logits, dtype=np.float64)
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    labels = _targets(y, Z.shape[0])
    gamma, alpha = cfg.effective()

    P = softmax(Z)
    rows = np.arange(Z.shape[0])
    log_pt = log_softmax(Z)[rows, labels]
    p_t = P[rows, labels]
    q = 1.0 - p_t
    if gamma == 0.0:
        g = -alpha[labels]
    else:
        # gamma * q**(gamma-1) * log_pt -> 0 as q -> 0 for any gamma > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            focus = np.where(q > 0.0, gamma * q ** (gamma - 1.0) * p_t * log_pt, 0.0)
        g = alpha[labels] * (focus - q**gamma)
    onehot = np.zeros_like(P)
    onehot[rows, labels] = 1.0
    grad = g[:, None] * (onehot - P)
    return grad[0] if single else grad
