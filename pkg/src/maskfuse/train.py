"""Adam optimizer, mini-batch training loop and k-fold cross-validation."""

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import rng
from .data import class_counts, fold_indices, stratified_kfold
from .errors import DataError, MissingClassError, NumericError
from .loss import LossConfig
from .metrics import cv_aggregate, evaluate
from .model import forward, init_params, loss_and_grads

log = logging.getLogger(__name__)

THREADS_ENV = "MASKFUSE_THREADS"


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        zeros = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        return cls({k: z.copy() for k, z in zeros.items()}, zeros, 0, lr, beta1, beta2, epsilon)


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Returns new ``(params, state)``.

    Inputs are not modified.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise DataError(f"gradient {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient entries in {name}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_m, new_v, new_tensors = {}, {}, {}
    for name, p in params.tensors.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_tensors[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name], new_v[name] = m, v
    return params.with_tensors(new_tensors), replace(state, m=new_m, v=new_v, t=t)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    gamma: float = 2.0
    acb_enabled: bool = True
    aff_enabled: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise DataError(f"lr must be > 0, got {self.lr}")

    @classmethod
    def from_dict(cls, obj):
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise DataError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    clamp_events: int = 0
    wall_time: float = 0.0


def loss_config_for(train_labels, cfg):
    """Adaptive focal loss from training counts, or plain CE without ACB."""
    if not cfg.acb_enabled:
        return LossConfig.plain()
    counts = class_counts(train_labels)
    missing = [c for c in range(3) if counts[c] == 0]
    if missing:
        raise MissingClassError(f"class {missing[0]} absent from the training set; cannot balance", missing[0])
    return LossConfig.adaptive(counts, gamma=cfg.gamma)


def train(dataset, arch, cfg):
    """Train from scratch; deterministic in ``(dataset, arch, cfg)``.

    ``cfg.aff_enabled`` overrides ``arch.aff_enabled``. Each epoch visits the
    training set in an order drawn from the SHUFFLE stream of ``cfg.seed``.
    """
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    arch = replace(arch, aff_enabled=cfg.aff_enabled)
    if (dataset.d, dataset.S) != (arch.d, arch.S):
        raise DataError(f"dataset (d={dataset.d}, S={dataset.S}) does not match arch (d={arch.d}, S={arch.S})")
    loss_cfg = loss_config_for(dataset.labels, cfg)

    params = init_params(arch, cfg.seed)
    state = AdamState.fresh(params, lr=cfg.lr)
    shuffle = rng.Stream(cfg.seed, rng.SHUFFLE)
    history = TrainHistory()
    start = time.perf_counter()
    X, y = dataset.features, dataset.labels
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss, grads, clamps = loss_and_grads(X[idx], y[idx], params, loss_cfg)
            params, state = adam_step(params, grads, state)
            total += loss * idx.size
            history.clamp_events += clamps
        history.epoch_loss.append(total / n)
        log.debug("epoch %d loss %.6f", epoch + 1, history.epoch_loss[-1])
    history.wall_time = time.perf_counter() - start
    return params, history


def evaluate_params(dataset, params):
    return evaluate(dataset.labels, forward(dataset, params))


def fit_fold(train_split, eval_split, arch, cfg):
    """Train on one split and score the other."""
    overlap = set(train_split.subject_ids) & set(eval_split.subject_ids)
    if overlap:
        raise DataError(f"train and eval splits share subjects: {sorted(overlap)[:5]}")
    params, _ = train(train_split, arch, cfg)
    return evaluate_params(eval_split, params)


def _thread_cap():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise DataError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def cross_validate(dataset, arch, cfg, k=5, threads=None):
    """Stratified k-fold CV; returns ``(fold_reports, averaged_report)``.

    Folds are drawn from ``cfg.seed``. Up to ``threads`` folds (default: the
    ``MASKFUSE_THREADS`` environment variable, else 1) train concurrently;
    results do not depend on the thread count.
    """
    folds = stratified_kfold(dataset.labels, k, cfg.seed)
    jobs = [(dataset.subset(tr), dataset.subset(ev)) for tr, ev in fold_indices(folds, k)]
    threads = _thread_cap() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, k)) as pool:
            reports = list(pool.map(lambda job: fit_fold(job[0], job[1], arch, cfg), jobs))
    else:
        reports = [fit_fold(tr, ev, arch, cfg) for tr, ev in jobs]
    return reports, cv_aggregate(reports)

