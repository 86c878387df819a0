"""Dense layer primitives with explicit forward/backward passes.

Every array is a float64 numpy array laid out batch-first: rows are query
points. Forward functions return ``(output, cache)``; the matching backward
consumes the cache.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from sno.errors import ConfigError, DimensionError, EmptyBatchError

TRAIN = "train"
EVAL = "eval"


@dataclass
class LayerCache:
    input: np.ndarray
    mask: Optional[np.ndarray] = None
    preactivation: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None


def _as_matrix(name, a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def affine_forward(W, b, X):
    """Y = X @ W.T + b, with W shaped (out, in)."""
    W = _as_matrix("W", W)
    X = _as_matrix("X", X)
    b = np.asarray(b, dtype=np.float64)
    if X.shape[1] != W.shape[1]:
        raise DimensionError(f"X has {X.shape[1]} columns but W expects {W.shape[1]} (W {W.shape}, X {X.shape})")
    if b.shape != (W.shape[0],):
        raise DimensionError(f"b has shape {b.shape}, expected ({W.shape[0]},) to match W {W.shape}")
    Y = X @ W.T
    Y += b
    return Y, LayerCache(input=X)


def affine_backward(dY, W, cache: LayerCache):
    """Returns ``(dX, dW, db)``."""
    dY = _as_matrix("dY", dY)
    X = cache.input
    if dY.shape != (X.shape[0], W.shape[0]):
        raise DimensionError(f"dY has shape {dY.shape}, expected {(X.shape[0], W.shape[0])} from W {W.shape} and cached X {X.shape}")
    dX = dY @ W
    dW = dY.T @ X
    db = dY.sum(axis=0)
    return dX, dW, db


def leaky_relu(X, slope=0.2):
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky slope must lie in (0, 1), got {slope}")
    X = _as_matrix("X", X)
    Y = np.where(X >= 0.0, X, slope * X)
    return Y, LayerCache(input=X)


def leaky_relu_backward(dY, cache: LayerCache, slope=0.2):
    return np.where(cache.input >= 0.0, dY, slope * dY)


def tanh_layer(X):
    X = _as_matrix("X", X)
    Y = np.tanh(X)
    return Y, LayerCache(input=X, output=Y)


def tanh_backward(dY, cache: LayerCache):
    Y = cache.output
    return dY * (1.0 - Y * Y)


def dropout(X, rate, mode=TRAIN, rng=None):
    """Inverted dropout. In eval mode (or with ``rate == 0``) the input is returned as is."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in (TRAIN, EVAL):
        raise ConfigError(f"unknown mode {mode!r}")
    X = _as_matrix("X", X)
    if mode == EVAL or rate == 0.0:
        return X, LayerCache(input=X)
    if rng is None:
        raise ConfigError("train-mode dropout needs an explicit rng")
    keep = rng.random(X.shape) >= rate
    mask = keep / (1.0 - rate)
    return X * mask, LayerCache(input=X, mask=mask)


def dropout_backward(dY, cache: LayerCache):
    if cache.mask is None:
        return dY
    return dY * cache.mask


def mse_loss(pred, target):
    """Mean of squared residuals and its gradient with respect to ``pred``."""
    pred = _as_matrix("pred", pred)
    target = _as_matrix("target", target)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} and target {target.shape} differ")
    n = pred.size
    if n == 0:
        raise EmptyBatchError("empty batch: mse_loss needs at least one row")
    resid = pred - target
    loss = float(np.mean(resid * resid))
    return loss, (2.0 / n) * resid
