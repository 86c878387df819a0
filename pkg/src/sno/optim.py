"""ADAM, cosine-annealed learning rate, and the two-phase subsampled training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from sno import kernels
from sno.dataio import Normalizer, fit_normalizer
from sno.errors import ConfigError, DimensionError, DivergenceError, RangeError
from sno.model import Model, forward, backward, param_names
from sno.sampler import full_indices, gather_batch, get_sampler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LrSchedule:
    eta_max: float
    step_f: int
    eta_min: float = 1e-16

    def __post_init__(self):
        if not 0 < self.eta_min <= self.eta_max:
            raise ConfigError(f"need 0 < eta_min <= eta_max, got {self.eta_min}, {self.eta_max}")
        if self.step_f < 1:
            raise ConfigError(f"step_f must be >= 1, got {self.step_f}")


def cosine_lr(step_c, sched: LrSchedule) -> float:
    """eta_min + (eta_max - eta_min) * (1 + cos(pi * step_c / step_f)) / 2."""
    if not 0 <= step_c <= sched.step_f:
        raise RangeError(f"step {step_c} outside [0, {sched.step_f}]")
    return sched.eta_min + 0.5 * (sched.eta_max - sched.eta_min) * (1.0 + math.cos(math.pi * step_c / sched.step_f))


@dataclass
class OptimState:
    m: dict
    v: dict
    step_c: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)

    def meta(self):
        return {"step_c": self.step_c, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_meta(cls, meta, m, v):
        return cls(m, v, int(meta["step_c"]), float(meta["beta1"]), float(meta["beta2"]), float(meta["eps"]))


def adam_step(params, grads, state: OptimState, eta):
    """One bias-corrected ADAM update, applied to ``params`` in place."""
    if set(grads) != set(params):
        raise DimensionError(f"gradient keys differ from parameter keys: {sorted(set(grads) ^ set(params))}")
    state.step_c += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step_c
    c2 = 1.0 - b2 ** state.step_c
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise DimensionError(f"gradient {k!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= eta * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    n_sub: int = 4096
    outer_steps: int = 1000
    inner_steps: int = 1000
    eta_min: float = 1e-16
    eta_outer: float = 1e-4
    eta_inner: float = 1e-5
    sampler: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.n_sub < 1:
            raise ConfigError(f"n_sub must be >= 1, got {self.n_sub}")
        if self.outer_steps < 0 or self.inner_steps < 0:
            raise ConfigError("step counts must be non-negative")
        get_sampler(self.sampler)

    @property
    def total_steps(self):
        return self.outer_steps + self.inner_steps

    def phase_of(self, step):
        """(phase name, schedule, step within phase) for a global step index."""
        if step < self.outer_steps:
            return "outer", LrSchedule(self.eta_outer, self.outer_steps, self.eta_min), step
        return "inner", LrSchedule(self.eta_inner, self.inner_steps, self.eta_min), step - self.outer_steps

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class HistoryRow:
    step: int
    phase: str
    eta: float
    mse: float


class Trainer:
    """Stateful training loop; can be paused and resumed bit-exactly.

    All randomness (sample choice, subsample, dropout masks) flows from one
    generator, whose state travels with checkpoints.
    """

    def __init__(self, model: Model, records, config: TrainConfig, normalizer: Normalizer = None,
                 optim_state: OptimState = None, step=0, rng=None):
        self.records = list(records)
        if not self.records:
            raise ConfigError("training set is empty")
        self.model = model
        self.config = config
        self.normalizer = normalizer if normalizer is not None else fit_normalizer(self.records)
        self.optim_state = optim_state if optim_state is not None else OptimState.zeros_like(model.params)
        self.step = step
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.history: list[HistoryRow] = []
        self._draw = get_sampler(config.sampler)

    @property
    def done(self):
        return self.step >= self.config.total_steps

    def train_step(self):
        phase, sched, step_c = self.config.phase_of(self.step)
        eta = cosine_lr(step_c, sched)
        record = self.records[int(self.rng.integers(len(self.records)))]
        idx = self._draw(record.grid, self.config.n_sub, self.rng)
        batch = gather_batch(record, idx, self.normalizer)
        self.model.train()
        pred = forward(self.model, batch, self.rng)
        loss, dpred = kernels.mse_loss(pred, batch.target)
        if not math.isfinite(loss):
            raise DivergenceError(self.step, loss)
        grads = backward(self.model, batch, dpred)
        adam_step(self.model.params, grads, self.optim_state, eta)
        row = HistoryRow(self.step, phase, eta, loss)
        self.history.append(row)
        self.step += 1
        return row

    def run(self, n_steps=None, log_every=0):
        end = self.config.total_steps if n_steps is None else min(self.step + n_steps, self.config.total_steps)
        while self.step < end:
            row = self.train_step()
            if log_every and row.step % log_every == 0:
                log.info("step %d [%s] eta=%.3e mse=%.6e", row.step, row.phase, row.eta, row.mse)
        self.model.eval()
        return self.history

    def rng_state(self):
        return self.rng.bit_generator.state

    @staticmethod
    def rng_from_state(state):
        rng = np.random.default_rng()
        rng.bit_generator.state = state
        return rng


def run_training(model: Model, records, config: TrainConfig, normalizer: Normalizer = None, log_every=0):
    """Train outer then inner phase; returns ``(model, history)`` with the model in eval mode."""
    trainer = Trainer(model, records, config, normalizer)
    history = trainer.run(log_every=log_every)
    return trainer.model, history


def full_domain_mse(model: Model, records, normalizer: Normalizer):
    """Eval-mode MSE over every lattice point of every record, in normalized units."""
    model.eval()
    total, count = 0.0, 0
    for r in records:
        batch = gather_batch(r, full_indices(r.grid), normalizer)
        pred = forward(model, batch)
        total += float(np.sum((pred - batch.target) ** 2))
        count += len(batch)
    return total / count


def write_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "phase", "eta", "mse"])
        for row in history:
            w.writerow([row.step, row.phase, repr(row.eta), repr(row.mse)])
