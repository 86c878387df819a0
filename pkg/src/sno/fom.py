"""Synthetic full-order model: random heterogeneous rock fields and a
backward-Euler finite-volume diffusion solve driven by a point injector.

The state ``u`` obeys ``phi du/dt = div(kappa grad u) + q delta_well`` with
no-flux walls and ``u = 0`` at t = 0.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import uniform_filter

from sno.errors import ConfigError, SolverError
from sno.sampler import GridSpec

log = logging.getLogger(__name__)


@dataclass
class FieldSpec:
    grid: GridSpec
    porosity_range: tuple = (0.15, 0.25)
    logk_mean: float = 0.0
    logk_std: float = 0.5
    correlation_cells: int = 1
    rate_range: tuple = (0.5, 1.5)
    duration_range: tuple = (0.5, 1.5)
    substeps: int = 1
    well_cell: Optional[tuple] = None   # None draws a random interior cell per sample
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = GridSpec.from_dict(self.grid)
        self.porosity_range = tuple(float(v) for v in self.porosity_range)
        self.rate_range = tuple(float(v) for v in self.rate_range)
        self.duration_range = tuple(float(v) for v in self.duration_range)
        lo, hi = self.porosity_range
        if not 0.0 < lo <= hi < 1.0:
            raise ConfigError(f"porosity_range must satisfy 0 < min <= max < 1, got {self.porosity_range}")
        if self.correlation_cells < 0:
            raise ConfigError(f"correlation_cells must be >= 0, got {self.correlation_cells}")
        if self.logk_std < 0:
            raise ConfigError(f"logk_std must be >= 0, got {self.logk_std}")
        if not 0.0 <= self.rate_range[0] <= self.rate_range[1]:
            raise ConfigError(f"rate_range must be non-negative and ordered, got {self.rate_range}")
        if not 0.0 <= self.duration_range[0] <= self.duration_range[1]:
            raise ConfigError(f"duration_range must be non-negative and ordered, got {self.duration_range}")
        if self.substeps < 1:
            raise ConfigError(f"substeps must be >= 1, got {self.substeps}")
        if self.well_cell is not None:
            self.well_cell = tuple(int(v) for v in self.well_cell)
            if len(self.well_cell) != 3 or not all(0 <= c < n for c, n in zip(self.well_cell, self.grid.shape)):
                raise ConfigError(f"well_cell {self.well_cell} outside grid {self.grid.shape}")

    def to_dict(self):
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SampleRecord:
    grid: GridSpec
    porosity: np.ndarray            # (n_cells,)
    perm: np.ndarray                # (3, n_cells)
    homo: np.ndarray                # [injection_rate, injection_duration]
    well_cell: tuple
    states: np.ndarray              # (nt, n_cells)
    name: Optional[str] = field(default=None, compare=False)

    def check(self):
        """Raise ``ValueError`` if any record invariant is broken."""
        n = self.grid.n_cells
        if self.porosity.shape != (n,) or self.perm.shape != (3, n) or self.states.shape != (self.grid.nt, n):
            raise ValueError("array shapes do not match the grid")
        if not np.all((self.porosity > 0) & (self.porosity < 1)):
            raise ValueError("porosity outside (0, 1)")
        if not np.all(self.perm > 0):
            raise ValueError("non-positive permeability")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite states")
        if np.any(self.states[0] != 0.0):
            raise ValueError("states[0] is not the zero initial condition")


def _smoothed_noise(shape, radius, rng):
    noise = rng.standard_normal(shape)
    if radius > 0:
        noise = uniform_filter(noise, size=2 * radius + 1, mode="reflect")
    return noise


def generate_fields(spec: FieldSpec, rng):
    """Random porosity (n_cells,) and per-axis permeability (3, n_cells).

    Porosity is box-smoothed white noise mapped affinely onto ``porosity_range``.
    Log-permeability is box-smoothed noise rescaled to unit variance, then
    ``exp(logk_mean + logk_std * noise)`` independently per axis.
    """
    shape = spec.grid.shape
    r = int(spec.correlation_cells)
    raw = _smoothed_noise(shape, r, rng).ravel()
    lo, hi = spec.porosity_range
    span = raw.max() - raw.min()
    if span > 0:
        porosity = lo + (raw - raw.min()) * ((hi - lo) / span)
    else:
        porosity = np.full(raw.shape, 0.5 * (lo + hi))

    perm = np.empty((3, spec.grid.n_cells))
    for axis in range(3):
        z = _smoothed_noise(shape, r, rng).ravel()
        sd = z.std()
        z = (z - z.mean()) / sd if sd > 0 else np.zeros_like(z)
        perm[axis] = np.exp(spec.logk_mean + spec.logk_std * z)
    return porosity, perm


def transmissibility_matrix(grid: GridSpec, perm):
    """Sparse SPD-semidefinite operator L with (L u)_i = sum_faces T_f (u_i - u_j).

    Face transmissibilities use the harmonic mean of the two cell values.
    """
    n = grid.n_cells
    ids = np.arange(n).reshape(grid.shape)
    spacing = grid.spacing
    vol = grid.cell_volume
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for axis in range(3):
        k = perm[axis].reshape(grid.shape)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        if ids[lo].size == 0:
            continue
        k1, k2 = k[lo], k[hi]
        k_face = 2.0 * k1 * k2 / (k1 + k2)
        h = spacing[axis]
        t = (k_face * (vol / h) / h).ravel()
        a, b = ids[lo].ravel(), ids[hi].ravel()
        rows += [a, b]
        cols += [b, a]
        vals += [-t, -t]
        np.add.at(diag, a, t)
        np.add.at(diag, b, t)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def conjugate_gradient(A, b, x0=None, rtol=1e-10, maxiter=None):
    """Jacobi-preconditioned CG for SPD ``A``; stops when ||b - A x|| <= rtol ||b||.

    Raises :class:`SolverError` carrying the final relative residual if the
    iteration cap is hit.
    """
    n = b.shape[0]
    if maxiter is None:
        maxiter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else x0.astype(np.float64, copy=True)
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(maxiter + 1):
        if np.linalg.norm(r) <= rtol * bnorm:
            # guard against drift of the recursive residual
            true_r = np.linalg.norm(b - A @ x)
            if true_r <= rtol * bnorm:
                return x, it
            r = b - A @ x
            z = inv_diag * r
            p = z.copy()
            rz = r @ z
            continue
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    resid = np.linalg.norm(b - A @ x) / bnorm
    raise SolverError(f"CG did not reach rtol={rtol} within {maxiter} iterations (relative residual {resid:.3e})", resid)


def solve_diffusion(porosity, perm, grid: GridSpec, well_cell, rate, duration, dt=None, nt=None, substeps=1,
                    rtol=1e-10):
    """Snapshots (nt, n_cells) of the injected diffusion problem.

    Snapshot ``k`` is at time ``k * dt``; each snapshot interval is split into
    ``substeps`` backward-Euler steps. The source injects
    ``rate * (min(t1, duration) - min(t0, duration))`` into the well cell over
    each step, so total content equals ``rate * min(t, duration)`` exactly.
    """
    nt = grid.nt if nt is None else int(nt)
    if dt is None:
        dt = grid.t_end / (grid.nt - 1) if grid.nt > 1 else grid.t_end
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if substeps < 1:
        raise ConfigError(f"substeps must be >= 1, got {substeps}")
    n = grid.n_cells
    porosity = np.asarray(porosity, dtype=np.float64)
    well = int(grid.flat_cell(*well_cell))
    h = dt / substeps
    storage = porosity * grid.cell_volume / h
    A = (transmissibility_matrix(grid, perm) + sp.diags(storage)).tocsr()

    states = np.zeros((nt, n))
    u = np.zeros(n)
    t = 0.0
    for k in range(1, nt):
        for s in range(substeps):
            t0 = (k - 1) * dt + s * h
            t1 = (k - 1) * dt + (s + 1) * h
            b = storage * u
            b[well] += rate * (min(t1, duration) - min(t0, duration)) / h
            u, _ = conjugate_gradient(A, b, x0=u, rtol=rtol)
        states[k] = u
    return states


def content(porosity, u, grid: GridSpec):
    """Total stored quantity sum(phi * u * cell_volume), per snapshot if ``u`` is 2-D."""
    return (np.asarray(u) * porosity).sum(axis=-1) * grid.cell_volume


def _draw_well(grid, rng):
    def interior(n):
        return int(rng.integers(1, n - 1)) if n >= 3 else int(rng.integers(0, n))
    return (interior(grid.nx), interior(grid.ny), interior(grid.nz))


def build_sample(spec: FieldSpec, rng, name=None) -> SampleRecord:
    porosity, perm = generate_fields(spec, rng)
    rate = float(rng.uniform(*spec.rate_range))
    duration = float(rng.uniform(*spec.duration_range))
    well = spec.well_cell if spec.well_cell is not None else _draw_well(spec.grid, rng)
    states = solve_diffusion(porosity, perm, spec.grid, well, rate, duration, substeps=spec.substeps)
    return SampleRecord(spec.grid, porosity, perm, np.array([rate, duration]), well, states, name=name)


def build_dataset(n_samples: int, spec: FieldSpec, rng=None) -> list:
    """``n_samples`` independent records, each from its own child RNG stream."""
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    seeds = np.random.SeedSequence(int(rng.integers(0, 2**63))).spawn(n_samples)
    records = []
    for i, ss in enumerate(seeds):
        try:
            records.append(build_sample(spec, np.random.default_rng(ss), name=f"sample_{i:04d}"))
        except SolverError as exc:
            raise SolverError(f"sample {i}: {exc}", exc.residual) from exc
        log.debug("built sample %d", i)
    return records
