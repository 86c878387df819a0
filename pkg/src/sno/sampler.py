"""Random space-time subsampling of a sample's lattice and feature gathering."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from sno.errors import BoundsError, ConfigError
from sno.model import QueryBatch


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred structured grid plus a uniformly spaced set of snapshot times.

    Snapshot ``i`` sits at ``t_end * i / (nt - 1)``; a single snapshot sits at 0.
    """

    nx: int
    ny: int
    nz: int
    nt: int
    x_extent: tuple = (0.0, 1.0)
    y_extent: tuple = (0.0, 1.0)
    z_extent: tuple = (0.0, 1.0)
    t_end: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x_extent", tuple(float(v) for v in self.x_extent))
        object.__setattr__(self, "y_extent", tuple(float(v) for v in self.y_extent))
        object.__setattr__(self, "z_extent", tuple(float(v) for v in self.z_extent))
        for name in ("nx", "ny", "nz", "nt"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"GridSpec.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("x_extent", "y_extent", "z_extent"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"GridSpec.{name} needs min < max, got {(lo, hi)}")
        if not self.t_end > 0:
            raise ConfigError(f"GridSpec.t_end must be positive, got {self.t_end}")

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def n_cells(self):
        return self.nx * self.ny * self.nz

    @property
    def spacing(self):
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.extents, self.shape))

    @property
    def extents(self):
        return (self.x_extent, self.y_extent, self.z_extent)

    @property
    def cell_volume(self):
        hx, hy, hz = self.spacing
        return hx * hy * hz

    def times(self):
        if self.nt == 1:
            return np.zeros(1)
        return self.t_end * np.arange(self.nt) / (self.nt - 1)

    def flat_cell(self, xi, yi, zi):
        return (np.asarray(xi) * self.ny + np.asarray(yi)) * self.nz + np.asarray(zi)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def subsample(grid: GridSpec, n_sub: int, rng) -> np.ndarray:
    """Draw ``n_sub`` (ti, xi, yi, zi) lattice indices i.i.d. uniformly, with replacement.

    Returns an int64 array of shape (n_sub, 4).
    """
    if n_sub < 1:
        raise ConfigError(f"n_sub must be >= 1, got {n_sub}")
    flat = rng.integers(0, grid.nt * grid.n_cells, size=n_sub)
    ti, xi, yi, zi = np.unravel_index(flat, (grid.nt, grid.nx, grid.ny, grid.nz))
    return np.stack([ti, xi, yi, zi], axis=1).astype(np.int64)


# Registry for alternative draw schemes (low-discrepancy etc.); only uniform exists.
SAMPLERS = {"uniform": subsample}


def get_sampler(name="uniform"):
    try:
        return SAMPLERS[name]
    except KeyError:
        raise ConfigError(f"unknown sampler {name!r}; available: {sorted(SAMPLERS)}") from None


def full_indices(grid: GridSpec) -> np.ndarray:
    """Every lattice index, time-major then C order over (x, y, z)."""
    ti, xi, yi, zi = np.unravel_index(np.arange(grid.nt * grid.n_cells), (grid.nt, grid.nx, grid.ny, grid.nz))
    return np.stack([ti, xi, yi, zi], axis=1).astype(np.int64)


def check_indices(grid: GridSpec, indices):
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[1] != 4:
        raise BoundsError(f"indices must have shape (n, 4), got {indices.shape}")
    upper = np.array([grid.nt, grid.nx, grid.ny, grid.nz])
    bad = np.any((indices < 0) | (indices >= upper), axis=1)
    if bad.any():
        row = int(np.argmax(bad))
        raise BoundsError(f"index {tuple(int(v) for v in indices[row])} (row {row}) outside lattice "
                          f"(nt, nx, ny, nz) = {tuple(int(u) for u in upper)}")
    return indices


def coordinates_of(grid: GridSpec, indices) -> np.ndarray:
    """Physical (t, x, y, z) of lattice indices, using cell centres in space."""
    indices = check_indices(grid, indices)
    out = np.empty(indices.shape, dtype=np.float64)
    out[:, 0] = grid.times()[indices[:, 0]]
    for axis, ((lo, hi), n) in enumerate(zip(grid.extents, grid.shape), start=1):
        out[:, axis] = lo + (indices[:, axis] + 0.5) * (hi - lo) / n
    return out


def hetero_features(sample):
    """Per-cell [porosity, log kx, log ky, log kz], shape (n_cells, 4)."""
    return np.column_stack([sample.porosity, np.log(sample.perm.T)])


def gather_batch(sample, indices, normalizer=None) -> QueryBatch:
    """Collect inputs and targets for the given lattice points of ``sample``.

    With ``normalizer=None`` everything stays in physical units.
    """
    grid = sample.grid
    indices = check_indices(grid, indices)
    cells = grid.flat_cell(indices[:, 1], indices[:, 2], indices[:, 3])
    topo = coordinates_of(grid, indices)
    hetero = hetero_features(sample)[cells]
    homo = np.broadcast_to(np.asarray(sample.homo, dtype=np.float64), (len(indices), 2)).copy()
    target = sample.states[indices[:, 0], cells][:, None]
    batch = QueryBatch(topo, hetero, homo, target)
    if normalizer is not None:
        batch = normalizer.normalize_batch(batch)
    return batch
