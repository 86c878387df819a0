"""Shared test oracles and small fixtures-as-functions."""
import numpy as np

from sno import kernels
from sno.fom import FieldSpec, build_dataset
from sno.model import ModelConfig, QueryBatch, forward
from sno.sampler import GridSpec


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def small_config(p=4, width=8, dropout_rate=0.0, seed=0):
    return ModelConfig(p=p, te_dims=[4, width, width, p], hepe_dims=[4, width, width, p],
                       hope_dims=[2, width, p], dropout_rate=dropout_rate, seed=seed)


def random_batch(n, rng, with_target=True):
    return QueryBatch(rng.uniform(-1, 1, (n, 4)), rng.uniform(-1, 1, (n, 4)),
                      np.repeat(rng.uniform(-1, 1, (1, 2)), n, axis=0),
                      rng.uniform(-1, 1, (n, 1)) if with_target else None)


def batch_loss(model, batch):
    pred = forward(model, batch)
    return kernels.mse_loss(pred, batch.target)[0]


def desk_grid(nx=8, ny=8, nz=8, nt=5):
    return GridSpec(nx, ny, nz, nt)


def desk_dataset(n=4, nx=8, ny=8, nz=8, nt=5, seed=0, **kw):
    spec = FieldSpec(desk_grid(nx, ny, nz, nt), seed=seed, **kw)
    return build_dataset(n, spec)
