"""Dense numeric kernel: affine maps, activations, pooling, softmax.

All functions operate on float64 numpy arrays and accept an optional leading
batch axis. Each forward op has a matching ``*_backward`` that maps the
upstream gradient to gradients of its inputs.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

N_EMOTIONS = 6


def _f64(x):
    return np.asarray(x, dtype=np.float64)


def affine(x, W, b):
    """``W @ x + b`` for ``x`` of shape (..., n), ``W`` (m, n), ``b`` (m,)."""
    x, W, b = _f64(x), _f64(W), _f64(b)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1:] != (W.shape[1],):
        raise DimensionError(
            f"affine: x {x.shape}, W {W.shape}, b {b.shape} do not agree"
        )
    return x @ W.T + b


def affine_backward(dout, x, W):
    """Return ``(dx, dW, db)``; batch axes of ``dout`` are summed into dW, db."""
    dout, x, W = _f64(dout), _f64(x), _f64(W)
    dx = dout @ W
    d2 = dout.reshape(-1, W.shape[0])
    x2 = x.reshape(-1, W.shape[1])
    return dx, d2.T @ x2, d2.sum(axis=0)


def relu(x):
    return np.maximum(_f64(x), 0.0)


def relu_backward(dout, x):
    return np.where(_f64(x) > 0.0, dout, 0.0)


def sigmoid(x):
    """Logistic function, evaluated without overflow for large ``|x|``."""
    x = _f64(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(dout, y):
    """Gradient through sigmoid given its *output* ``y``."""
    return dout * y * (1.0 - y)


def activation(x, kind):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def spatial_pool(F, mode):
    """Reduce a channel map (..., C, S) over its spatial axis."""
    F = _f64(F)
    if F.ndim < 2 or F.shape[-1] < 1 or F.shape[-2] < 1:
        raise DimensionError(f"spatial_pool expects (..., C, S), got {F.shape}")
    if mode == "avg":
        return F.mean(axis=-1)
    if mode == "max":
        return F.max(axis=-1)
    raise ValueError(f"unknown pooling mode {mode!r}")


def spatial_pool_backward(dout, F, mode):
    F = _f64(F)
    S = F.shape[-1]
    if mode == "avg":
        return np.repeat(_f64(dout)[..., None] / S, S, axis=-1)
    # route to the first maximal position
    idx = F.argmax(axis=-1)
    dF = np.zeros_like(F)
    np.put_along_axis(dF, idx[..., None], _f64(dout)[..., None], axis=-1)
    return dF


def concat_channels(maps):
    """Stack six (d, S) maps into one (6d, S) channel map.

    ``maps`` may be a sequence of six arrays or an array of shape
    (..., 6, d, S); channel block ``k*d:(k+1)*d`` of the result is map ``k``.
    """
    if isinstance(maps, np.ndarray):
        arr = _f64(maps)
    else:
        shapes = {np.shape(m) for m in maps}
        if len(shapes) != 1:
            raise DimensionError(f"feature maps disagree in shape: {sorted(shapes)}")
        arr = np.stack([_f64(m) for m in maps])
    if arr.ndim < 3 or arr.shape[-3] != N_EMOTIONS:
        raise DimensionError(f"expected {N_EMOTIONS} maps of shape (d, S), got {arr.shape}")
    d, S = arr.shape[-2:]
    return arr.reshape(arr.shape[:-3] + (N_EMOTIONS * d, S))


def split_channels(F):
    """Inverse of ``concat_channels``."""
    F = _f64(F)
    C, S = F.shape[-2:]
    if C % N_EMOTIONS:
        raise DimensionError(f"{C} channels is not a multiple of {N_EMOTIONS}")
    return F.reshape(F.shape[:-2] + (N_EMOTIONS, C // N_EMOTIONS, S))


def softmax(logits):
    """Softmax over the last axis, shifted by the row max for stability."""
    z = _f64(logits)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = _f64(logits)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_backward(dout, p):
    dout = _f64(dout)
    return p * (dout - (dout * p).sum(axis=-1, keepdims=True))


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tolerance: float
    per_param: dict = field(default_factory=dict)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max relative error {self.max_rel_error:.3e} (tol {self.tolerance:g})"


def relative_error(analytic, numeric):
    analytic, numeric = _f64(analytic), _f64(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(fn, params, h=1e-5):
    """Central differences of scalar ``fn`` w.r.t. every entry of ``params``.

    ``params`` is an array or a dict of arrays; it is perturbed in place and
    restored afterwards.
    """
    tensors = params if isinstance(params, dict) else {"theta": params}
    grads = {}
    for name, arr in tensors.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            f_plus = fn(params)
            flat[j] = orig - h
            f_minus = fn(params)
            flat[j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss probing {name}[{j}]")
            gflat[j] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = g
    return grads if isinstance(params, dict) else grads["theta"]


def grad_check(loss_fn, params, h=1e-5, tolerance=1e-4, probe_fn=None):
    """Compare an analytic gradient to central finite differences.

    ``loss_fn(params)`` must return ``(loss, grad)`` where ``grad`` has the
    structure of ``params`` (an array, or a dict of arrays). If given,
    ``probe_fn(params) -> loss`` is used for the difference quotients instead
    of ``loss_fn``; it must compute the same function (e.g. at higher precision).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    tensors = params if isinstance(params, dict) else {"theta": params}
    tensors = {k: np.array(v, dtype=np.float64) for k, v in tensors.items()}
    probe = tensors if isinstance(params, dict) else tensors["theta"]

    loss, analytic = loss_fn(probe)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss at the base point")
    if probe_fn is None:
        probe_fn = lambda p: loss_fn(p)[0]  # noqa: E731
    numeric = numeric_gradient(probe_fn, probe, h)
    if not isinstance(params, dict):
        analytic, numeric = {"theta": analytic}, {"theta": numeric}

    per_param = {}
    for name in tensors:
        err = relative_error(analytic[name], numeric[name])
        per_param[name] = float(err.max()) if err.size else 0.0
    worst = max(per_param.values(), default=0.0)
    return GradCheckReport(worst, worst < tolerance, tolerance, per_param)
