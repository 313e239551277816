"""Finite-difference verification of the model's analytic gradients.

Difference quotients are taken on ``reference_loss``, a separate, plain
re-implementation of forward pass + loss evaluated in ``np.longdouble``.
On x86-64 that is 80-bit extended precision, which pushes the roundoff in
``(f(x+h) - f(x-h)) / 2h`` about three orders of magnitude below what
float64 allows, so near-zero gradient entries are still checked meaningfully.
"""

from dataclasses import dataclass

import numpy as np

from .loss import CROSS_ENTROPY, LossConfig
from .model import ArchConfig, init_params, loss_and_grads
from .nn import grad_check

EXT = np.longdouble


def reference_loss(X, labels, tensors, arch, loss_cfg, dtype=EXT):
    """Batch-mean loss computed directly from the model equations."""
    t = {k: np.asarray(v, dtype=dtype) for k, v in tensors.items()}
    X = np.asarray(X, dtype=dtype)
    B = X.shape[0]
    F = X.reshape(B, -1, arch.S)
    avg = F.sum(axis=-1) / arch.S
    if arch.aff_enabled:
        def mlp(x):
            return np.maximum(x @ t["W1"].T + t["b1"], 0) @ t["W2"].T + t["b2"]
        z = mlp(avg) + mlp(F.max(axis=-1))
        w = 1 / (1 + np.exp(-z))
    else:
        w = np.ones_like(avg)
    fused = (F * w[:, :, None]).sum(axis=-1) / arch.S
    logits = np.maximum(fused @ t["W3"].T + t["b3"], 0) @ t["W4"].T + t["b4"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(B)
    log_pt = log_p[rows, labels]
    if loss_cfg.mode == CROSS_ENTROPY:
        per = -log_pt
    else:
        alpha = np.asarray(loss_cfg.alpha, dtype=dtype)
        per = alpha[labels] * (1 - np.exp(log_pt)) ** dtype(loss_cfg.gamma) * -log_pt
    return per.sum() / B


def check_model(X, labels, params, loss_cfg, h=1e-5, tolerance=1e-4):
    """Grad-check every parameter tensor of ``params`` on one batch."""
    labels = np.asarray(labels, dtype=np.int64)

    def analytic(tensors):
        loss, grads, _ = loss_and_grads(X, labels, params.with_tensors(tensors), loss_cfg)
        return loss, grads

    def probe(tensors):
        return reference_loss(X, labels, tensors, params.arch, loss_cfg)

    return grad_check(analytic, params.tensors, h=h, tolerance=tolerance, probe_fn=probe)


@dataclass
class SuiteResult:
    configs: list
    reports: list

    @property
    def max_rel_error(self):
        return max(r.max_rel_error for r in self.reports)

    @property
    def passed(self):
        return all(r.passed for r in self.reports)


def random_suite(n_configs=20, seed=0, d=None, S=None, max_d=8, max_S=4, max_batch=5,
                 h=1e-5, tolerance=1e-4):
    """Grad-check ``n_configs`` random architectures, batches and loss settings.

    Configurations cycle through all four (AFF on/off) x (adaptive focal /
    plain CE) combinations. ``d`` and ``S`` are random unless pinned.
    """
    rs = np.random.default_rng(seed)
    configs, reports = [], []
    for i in range(n_configs):
        dd = d if d is not None else int(rs.integers(1, max_d + 1))
        ss = S if S is not None else int(rs.integers(1, max_S + 1))
        arch = ArchConfig(
            d=dd, S=ss,
            r=int(rs.integers(1, 6 * dd + 1)),
            h=int(rs.integers(1, 9)),
            aff_enabled=bool(i % 2 == 0),
        )
        B = int(rs.integers(1, max_batch + 1))
        X = rs.normal(size=(B, 6, dd, ss))
        labels = rs.integers(0, 3, size=B)
        if (i // 2) % 2 == 0:
            alpha = tuple(np.round(rs.uniform(1.0, 10.0, size=3), 3))
            loss_cfg = LossConfig(gamma=float(rs.choice([0.5, 1.0, 2.0, 3.0])), alpha=alpha)
        else:
            loss_cfg = LossConfig.plain()
        params = init_params(arch, int(rs.integers(0, 2**31)))
        # nonzero biases so every bias gradient path is exercised
        params = params.with_tensors({
            k: (v + 0.1 * rs.normal(size=v.shape) if k.startswith("b") else v)
            for k, v in params.tensors.items()
        })
        configs.append((arch, B, loss_cfg))
        reports.append(check_model(X, labels, params, loss_cfg, h=h, tolerance=tolerance))
    return SuiteResult(configs, reports)
