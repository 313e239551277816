"""Attention-fusion severity classifier.

Topology for a subject's six (d, S) expression maps::

    F      = concat(maps)                                  (6d, S)
    w      = sigmoid(mlp(avg_pool(F)) + mlp(max_pool(F)))  (6d,)
    fused  = avg_pool(w[:, None] * F) = w * avg_pool(F)    (6d,)
    logits = W4 relu(W3 fused + b3) + b4                   (3,)
    probs  = softmax(logits)

``mlp(x) = W2 relu(W1 x + b1) + b2`` is one bottleneck MLP shared by both
pooled branches. With ``aff_enabled=False`` the attention branch is skipped
and ``w`` is pinned to ones.
"""

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng
from .data import ClassLabel, Dataset, SubjectSample
from .errors import BadMagicError, DataError, DimensionError, MissingFileError, TruncatedFileError, VersionMismatchError
from .loss import focal_loss_grad, focal_losses
from .nn import (
    N_EMOTIONS,
    affine,
    affine_backward,
    concat_channels,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    softmax,
    spatial_pool,
)

N_CLASSES = 3
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4")

CHECKPOINT_MAGIC = b"MFUS"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    d: int = 512
    S: int = 1
    r: int = 16
    h: int = 128
    aff_enabled: bool = True

    def __post_init__(self):
        if self.d < 1 or self.S < 1 or self.h < 1:
            raise DataError(f"d, S, h must be >= 1 (got d={self.d}, S={self.S}, h={self.h})")
        if not 1 <= self.r <= self.channels:
            raise DataError(f"reduction r must lie in [1, {self.channels}], got {self.r}")

    @property
    def channels(self):
        return N_EMOTIONS * self.d

    @property
    def bottleneck(self):
        return math.ceil(self.channels / self.r)

    def shapes(self):
        C, k, h = self.channels, self.bottleneck, self.h
        return {
            "W1": (k, C), "b1": (k,),
            "W2": (C, k), "b2": (C,),
            "W3": (h, C), "b3": (h,),
            "W4": (N_CLASSES, h), "b4": (N_CLASSES,),
        }


@dataclass
class ModelParams:
    arch: ArchConfig
    tensors: dict

    def __post_init__(self):
        shapes = self.arch.shapes()
        if set(self.tensors) != set(PARAM_NAMES):
            raise DimensionError(f"expected tensors {PARAM_NAMES}, got {sorted(self.tensors)}")
        for name in PARAM_NAMES:
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise DimensionError(f"{name}: shape {arr.shape}, expected {shapes[name]}")
            self.tensors[name] = arr

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self):
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def with_tensors(self, tensors):
        return ModelParams(self.arch, dict(tensors))

    def equal(self, other):
        """Bit-level equality (distinguishes -0.0 from 0.0, NaN payloads)."""
        return self.arch == other.arch and all(
            self.tensors[k].tobytes() == other.tensors[k].tobytes() for k in PARAM_NAMES
        )


def init_params(arch, seed):
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases.

    Weights are drawn from the INIT stream of ``seed`` in the order W1, W2,
    W3, W4, each row-major, as ``bound * (2u - 1)``.
    """
    stream = rng.Stream(seed, rng.INIT)
    tensors = {}
    for name, shape in arch.shapes().items():
        if name.startswith("b"):
            tensors[name] = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / shape[1])
            u = stream.uniform(shape[0] * shape[1]).reshape(shape)
            tensors[name] = bound * (2.0 * u - 1.0)
    return ModelParams(arch, tensors)


# ---------------------------------------------------------------------------
# forward pieces (all accept an optional leading batch axis)


def _mlp(x, p):
    pre = affine(x, p["W1"], p["b1"])
    hidden = relu(pre)
    return affine(hidden, p["W2"], p["b2"]), (pre, hidden)


def attention_weights(F, attn):
    """Channel weights in (0, 1) from a (..., 6d, S) map.

    ``attn`` is a mapping holding W1, b1, W2, b2 (a ModelParams works).
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim < 2 or F.shape[-2] != np.shape(attn["W1"])[1]:
        raise DimensionError(f"channel map {F.shape} does not match attention input {np.shape(attn['W1'])[1]}")
    z_avg, _ = _mlp(spatial_pool(F, "avg"), attn)
    z_max, _ = _mlp(spatial_pool(F, "max"), attn)
    return sigmoid(z_avg + z_max)


def fuse(F, w_attn):
    """Scale each channel by its weight, then average over space."""
    F = np.asarray(F, dtype=np.float64)
    w_attn = np.asarray(w_attn, dtype=np.float64)
    if w_attn.shape != F.shape[:-1]:
        raise DimensionError(f"attention weights {w_attn.shape} do not match channel map {F.shape}")
    return spatial_pool(F * w_attn[..., None], "avg")


def classify(fused, clf):
    """Two FC layers: ``W4 relu(W3 fused + b3) + b4``."""
    hidden = relu(affine(fused, clf["W3"], clf["b3"]))
    return affine(hidden, clf["W4"], clf["b4"])


def _as_batch(samples, arch):
    """Return a (B, 6, d, S) array from a Dataset, sample(s) or raw array."""
    if isinstance(samples, Dataset):
        X = samples.features
    elif isinstance(samples, SubjectSample):
        X = samples.maps[None]
    elif isinstance(samples, np.ndarray):
        X = samples if samples.ndim == 4 else samples[None]
    else:
        X = np.stack([s.maps for s in samples])
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != (N_EMOTIONS, arch.d, arch.S):
        raise DimensionError(f"sample maps {X.shape[1:]} do not match arch (6, {arch.d}, {arch.S})")
    return X


def _forward(X, params):
    """Batched forward pass keeping every intermediate for backward."""
    F = concat_channels(X)
    avg = spatial_pool(F, "avg")
    cache = {"F": F, "avg": avg}
    if params.arch.aff_enabled:
        mx = spatial_pool(F, "max")
        z_avg, cache["mlp_avg"] = _mlp(avg, params)
        z_max, cache["mlp_max"] = _mlp(mx, params)
        w = sigmoid(z_avg + z_max)
        cache["max"] = mx
    else:
        w = np.ones_like(avg)
    cache["w"] = w
    fused = fuse(F, w)
    pre3 = affine(fused, params["W3"], params["b3"])
    hidden = relu(pre3)
    logits = affine(hidden, params["W4"], params["b4"])
    cache.update(fused=fused, pre3=pre3, hidden=hidden)
    return logits, cache


def forward_logits(samples, params):
    return _forward(_as_batch(samples, params.arch), params)[0]


def forward(samples, params):
    """Class probabilities; shape (3,) for one sample, (B, 3) for a batch."""
    probs = softmax(forward_logits(samples, params))
    if isinstance(samples, SubjectSample) or (isinstance(samples, np.ndarray) and samples.ndim == 3):
        return probs[0]
    return probs


def decide(probs):
    """Argmax over the last axis; ``np.argmax`` resolves ties to the lowest index."""
    probs = np.asarray(probs)
    if probs.ndim == 1:
        return ClassLabel(int(np.argmax(probs)))
    return np.argmax(probs, axis=-1)


def predict(samples, params):
    """ClassLabel for one sample, label array for a batch."""
    return decide(forward(samples, params))


# ---------------------------------------------------------------------------
# backward


def _mlp_backward(dz, x, cache, params, grads):
    pre, hidden = cache
    dhidden, dW2, db2 = affine_backward(dz, hidden, params["W2"])
    dpre = relu_backward(dhidden, pre)
    _, dW1, db1 = affine_backward(dpre, x, params["W1"])
    grads["W2"] += dW2
    grads["b2"] += db2
    grads["W1"] += dW1
    grads["b1"] += db1


def loss_and_grads(X, labels, params, loss_cfg):
    """Mean loss, parameter gradients and clamp count for a raw batch."""
    X = _as_batch(X, params.arch)
    labels = np.asarray(labels, dtype=np.int64)
    B = X.shape[0]
    if B == 0:
        raise DataError("backward on an empty batch")
    logits, c = _forward(X, params)
    losses, clamps = focal_losses(softmax(logits), labels, loss_cfg)
    dlogits = focal_loss_grad(logits, labels, loss_cfg) / B

    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    dhidden, grads["W4"], grads["b4"] = affine_backward(dlogits, c["hidden"], params["W4"])
    dpre3 = relu_backward(dhidden, c["pre3"])
    dfused, grads["W3"], grads["b3"] = affine_backward(dpre3, c["fused"], params["W3"])
    if params.arch.aff_enabled:
        # d fused / d w = avg_pool(F); only the path through w reaches trainable weights
        dz = sigmoid_backward(dfused * c["avg"], c["w"])
        _mlp_backward(dz, c["avg"], c["mlp_avg"], params, grads)
        _mlp_backward(dz, c["max"], c["mlp_max"], params, grads)
    return float(losses.mean()), grads, clamps


def backward(batch, params, loss_cfg):
    """Gradients of the batch-mean loss and the loss itself.

    ``batch`` is a Dataset or a non-empty sequence of SubjectSample.
    """
    if isinstance(batch, Dataset):
        X, labels = batch.features, batch.labels
    else:
        batch = list(batch)
        if not batch:
            raise DataError("backward on an empty batch")
        X = np.stack([s.maps for s in batch])
        labels = [int(s.label) for s in batch]
    loss, grads, _ = loss_and_grads(X, labels, params, loss_cfg)
    return grads, loss


# ---------------------------------------------------------------------------
# checkpoint file
#
# b"MFUS", u16 version, u32 d, u32 S, u32 r, u32 h, u8 aff_enabled, then for
# each tensor in PARAM_NAMES order: u32 ndim, ndim x u32 dims, little-endian
# f64 values row-major.

_CKPT_HEADER = struct.Struct("<4sHIIIIB")


def checkpoint_bytes(params):
    a = params.arch
    out = [_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, a.d, a.S, a.r, a.h, int(a.aff_enabled))]
    for name in PARAM_NAMES:
        arr = params[name]
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


def params_from_bytes(blob, source="<bytes>"):
    if len(blob) < _CKPT_HEADER.size:
        raise TruncatedFileError(f"{source}: shorter than the checkpoint header")
    magic, version, d, S, r, h, aff = _CKPT_HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{source}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    arch = ArchConfig(d=d, S=S, r=r, h=h, aff_enabled=bool(aff))
    pos = _CKPT_HEADER.size
    tensors = {}
    try:
        for name in PARAM_NAMES:
            (ndim,) = struct.unpack_from("<I", blob, pos)
            dims = struct.unpack_from(f"<{ndim}I", blob, pos + 4)
            pos += 4 + 4 * ndim
            n = int(np.prod(dims))
            if pos + 8 * n > len(blob):
                raise TruncatedFileError(f"{source}: tensor {name} runs past end of file")
            tensors[name] = np.frombuffer(blob, "<f8", n, pos).astype(np.float64).reshape(dims)
            pos += 8 * n
    except struct.error:
        raise TruncatedFileError(f"{source}: truncated tensor header") from None
    if pos != len(blob):
        raise DataError(f"{source}: {len(blob) - pos} trailing bytes")
    return ModelParams(arch, tensors)


def save_checkpoint(params, path):
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"checkpoint not found: {path}")
    return params_from_bytes(path.read_bytes(), str(path))


def with_aff(arch, enabled):
    return replace(arch, aff_enabled=enabled)
