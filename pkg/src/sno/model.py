"""Three embedders (topology, heterogeneous, homogeneous) summed in a shared
latent space and decoded pointwise by a single affine layer."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from sno import kernels
from sno.errors import ConfigError, DimensionError, StateError
from sno.kernels import EVAL, TRAIN

STACKS = ("te", "hepe", "hope")
# batch attribute feeding each embedder
STACK_INPUT = {"te": "topo", "hepe": "hetero", "hope": "homo"}

# Eval-mode forward always runs on zero-padded tiles of this many rows so a
# row's prediction does not depend on how many other rows share the call.
EVAL_TILE = 256


@dataclass
class ModelConfig:
    p: int = 250
    te_dims: Optional[list] = None
    hepe_dims: Optional[list] = None
    hope_dims: Optional[list] = None
    dropout_rate: float = 0.3
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.te_dims is None:
            self.te_dims = [4, 512, 512, 512, 512, self.p]
        if self.hepe_dims is None:
            self.hepe_dims = [4, 512, 512, 512, 512, self.p]
        if self.hope_dims is None:
            self.hope_dims = [2, 32, 32, 32, self.p]
        self.te_dims = [int(d) for d in self.te_dims]
        self.hepe_dims = [int(d) for d in self.hepe_dims]
        self.hope_dims = [int(d) for d in self.hope_dims]

    def dims(self, stack):
        return getattr(self, f"{stack}_dims")

    def validate(self):
        if self.p < 1:
            raise ConfigError(f"embedded dimension p must be >= 1, got {self.p}")
        for stack in STACKS:
            dims = self.dims(stack)
            if len(dims) < 2:
                raise ConfigError(f"{stack}_dims needs at least an input and an output width, got {dims}")
            if any(d < 1 for d in dims):
                raise ConfigError(f"{stack}_dims has a width < 1: {dims}")
            if dims[-1] != self.p:
                raise ConfigError(f"{stack}_dims must end in p={self.p}, got {dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class QueryBatch:
    topo: np.ndarray
    hetero: np.ndarray
    homo: np.ndarray
    target: Optional[np.ndarray] = None

    def __len__(self):
        return self.topo.shape[0]

    def take(self, rows):
        """Sub-batch with the selected rows (slice or index array)."""
        return QueryBatch(
            self.topo[rows], self.hetero[rows], self.homo[rows],
            None if self.target is None else self.target[rows],
        )


@dataclass
class Model:
    config: ModelConfig
    params: dict = field(default_factory=dict)
    mode: str = TRAIN
    _tape: Optional[dict] = field(default=None, repr=False)

    def train(self):
        self.mode = TRAIN
        return self

    def eval(self):
        self.mode = EVAL
        self._tape = None
        return self

    def layers(self, stack):
        return len(self.config.dims(stack)) - 1

    def copy(self):
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.mode)


def param_names(config: ModelConfig):
    names = []
    for stack in STACKS:
        for i in range(len(config.dims(stack)) - 1):
            names += [f"{stack}.{i}.W", f"{stack}.{i}.b"]
    names += ["decoder.W", "decoder.b"]
    return names


def _layer_shapes(config):
    for stack in STACKS:
        dims = config.dims(stack)
        for i in range(len(dims) - 1):
            yield f"{stack}.{i}", dims[i], dims[i + 1]
    yield "decoder", config.p, 1


def build_model(config: ModelConfig) -> Model:
    """Allocate all layers, uniform in +-sqrt(1/fan_in), deterministically from ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = {}
    for prefix, fan_in, fan_out in _layer_shapes(config):
        bound = np.sqrt(1.0 / fan_in)
        params[f"{prefix}.W"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"{prefix}.b"] = rng.uniform(-bound, bound, size=fan_out)
    return Model(config, params)


def count_params(model: Model) -> int:
    return sum((fan_in + 1) * fan_out for _, fan_in, fan_out in _layer_shapes(model.config))


def count_macs(model: Model) -> int:
    """Multiply-accumulates needed to evaluate one query row."""
    return sum(fan_in * fan_out for _, fan_in, fan_out in _layer_shapes(model.config))


def _check_batch(model, batch):
    for stack in STACKS:
        arr = getattr(batch, STACK_INPUT[stack])
        want = model.config.dims(stack)[0]
        if arr.ndim != 2 or arr.shape[1] != want:
            raise DimensionError(f"batch.{STACK_INPUT[stack]} has shape {arr.shape}, {stack} expects {want} features per row")
        if arr.shape[0] != len(batch):
            raise DimensionError(f"batch.{STACK_INPUT[stack]} has {arr.shape[0]} rows, topo has {len(batch)}")


def _embed(model, stack, X, mode, rng, caches):
    cfg = model.config
    n_layers = model.layers(stack)
    h = X
    for i in range(n_layers):
        W = model.params[f"{stack}.{i}.W"]
        b = model.params[f"{stack}.{i}.b"]
        h, c_aff = kernels.affine_forward(W, b, h)
        if i < n_layers - 1:
            h, c_act = kernels.leaky_relu(h, cfg.leaky_slope)
            h, c_drop = kernels.dropout(h, cfg.dropout_rate, mode, rng)
        else:
            h, c_act = kernels.tanh_layer(h)
            c_drop = None
        if caches is not None:
            caches.append((c_aff, c_act, c_drop))
    return h


def _forward_rows(model, batch, mode, rng, tape):
    latent = None
    for stack in STACKS:
        caches = None if tape is None else tape.setdefault(stack, [])
        z = _embed(model, stack, getattr(batch, STACK_INPUT[stack]), mode, rng, caches)
        latent = z if latent is None else latent + z
    pred, c_dec = kernels.affine_forward(model.params["decoder.W"], model.params["decoder.b"], latent)
    if tape is not None:
        tape["decoder"] = c_dec
    return pred


def _forward_tiled(model, batch, tile=EVAL_TILE):
    n = len(batch)
    out = np.empty((n, 1))
    for start in range(0, n, tile):
        stop = min(start + tile, n)
        parts = []
        for name in ("topo", "hetero", "homo"):
            arr = getattr(batch, name)
            padded = np.zeros((tile, arr.shape[1]))
            padded[: stop - start] = arr[start:stop]
            parts.append(padded)
        pred = _forward_rows(model, QueryBatch(*parts), EVAL, None, None)
        out[start:stop] = pred[: stop - start]
    return out


def forward(model: Model, batch: QueryBatch, rng=None):
    """Predictions (n x 1) for every query row.

    In train mode dropout is active (``rng`` required when the rate is non-zero)
    and layer caches are kept for :func:`backward`. In eval mode the batch is
    processed in fixed-size padded tiles, so results are bit-identical however
    the caller chunks its queries.
    """
    _check_batch(model, batch)
    if model.mode == EVAL:
        return _forward_tiled(model, batch)
    tape = {"batch": id(batch), "n": len(batch)}
    pred = _forward_rows(model, batch, TRAIN, rng, tape)
    model._tape = tape
    return pred


def backward(model: Model, batch: QueryBatch, dPred):
    """Gradients of the loss w.r.t. every parameter, given dLoss/dPred.

    Consumes the tape left by the preceding train-mode :func:`forward` on the
    same batch.
    """
    tape = model._tape
    if tape is None or tape["batch"] != id(batch) or tape["n"] != len(batch):
        raise StateError("backward() needs a preceding train-mode forward() on the same batch")
    model._tape = None
    dPred = np.asarray(dPred, dtype=np.float64)
    if dPred.shape != (len(batch), 1):
        raise DimensionError(f"dPred has shape {dPred.shape}, expected ({len(batch)}, 1)")

    cfg = model.config
    grads = {}
    dLatent, grads["decoder.W"], grads["decoder.b"] = kernels.affine_backward(
        dPred, model.params["decoder.W"], tape["decoder"])
    # summation fusion: each embedder receives dLatent unchanged
    for stack in STACKS:
        dh = dLatent
        for i in reversed(range(model.layers(stack))):
            c_aff, c_act, c_drop = tape[stack][i]
            if c_drop is None:
                dh = kernels.tanh_backward(dh, c_act)
            else:
                dh = kernels.dropout_backward(dh, c_drop)
                dh = kernels.leaky_relu_backward(dh, c_act, cfg.leaky_slope)
            dh, grads[f"{stack}.{i}.W"], grads[f"{stack}.{i}.b"] = kernels.affine_backward(
                dh, model.params[f"{stack}.{i}.W"], c_aff)
    return {name: grads[name] for name in param_names(cfg)}
