"""Evaluation of a trained model on full grids, lattice subsets, or arbitrary
physical query points."""
from __future__ import annotations

import numpy as np

from sno.dataio import Normalizer
from sno.metrics import MetricsReport, report
from sno.model import Model, QueryBatch, forward
from sno.sampler import full_indices, gather_batch, hetero_features


def predict_indices(model: Model, record, normalizer: Normalizer, indices, batch_size=4096):
    """Physical-unit predictions at lattice ``indices`` (n, 4), evaluated ``batch_size`` rows at a time."""
    model.eval()
    out = np.empty(len(indices))
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        batch = gather_batch(record, chunk, normalizer)
        out[start:start + len(chunk)] = normalizer.denormalize_target(forward(model, batch))[:, 0]
    return out


def predict_record(model: Model, record, normalizer: Normalizer, batch_size=4096):
    """Predictions on every lattice point, shaped like ``record.states``."""
    pred = predict_indices(model, record, normalizer, full_indices(record.grid), batch_size)
    return pred.reshape(record.grid.nt, record.grid.n_cells)


def evaluate_record(model, record, normalizer, batch_size=4096, cells=None) -> tuple[MetricsReport, np.ndarray]:
    """Metrics over all timestamps, on all cells or only on ``cells``; also returns the prediction array."""
    grid = record.grid
    if cells is None:
        pred = predict_record(model, record, normalizer, batch_size)
        truth = record.states
    else:
        cells = np.asarray(cells)
        ti = np.repeat(np.arange(grid.nt), len(cells))
        xi, yi, zi = np.unravel_index(np.tile(cells, grid.nt), grid.shape)
        idx = np.stack([ti, xi, yi, zi], axis=1)
        pred = predict_indices(model, record, normalizer, idx, batch_size).reshape(grid.nt, len(cells))
        truth = record.states[:, cells]
    return report(truth, pred), pred


def locate_points(grid, points):
    """Nearest-cell lookup for physical (t, x, y, z) rows.

    Returns ``(flat_cells, inside)``; rows outside the time horizon or the
    spatial extents are flagged ``inside == False`` (their cell is meaningless).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    inside = np.isfinite(points).all(axis=1)
    inside &= (points[:, 0] >= 0.0) & (points[:, 0] <= grid.t_end)
    idx = []
    for axis, ((lo, hi), n) in enumerate(zip(grid.extents, grid.shape), start=1):
        v = points[:, axis]
        inside &= (v >= lo) & (v <= hi)
        with np.errstate(invalid="ignore"):
            i = np.floor((v - lo) / (hi - lo) * n)
        idx.append(np.clip(np.nan_to_num(i), 0, n - 1).astype(np.int64))
    return grid.flat_cell(*idx), inside


def predict_points(model: Model, record, normalizer: Normalizer, points, het_table=None):
    """Predictions at physical query points; off-lattice times and positions are allowed.

    Heterogeneous inputs come from the nearest cell. Returns ``(pred, inside)``
    with ``pred`` NaN where the point lies outside the sample's domain.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    cells, inside = locate_points(record.grid, points)
    pred = np.full(len(points), np.nan)
    if inside.any():
        sel = np.flatnonzero(inside)
        if het_table is None:
            het_table = hetero_features(record)
        het = het_table[cells[sel]]
        homo = np.broadcast_to(np.asarray(record.homo, dtype=np.float64), (len(sel), 2))
        batch = normalizer.normalize_batch(QueryBatch(points[sel], het, homo))
        model.eval()
        pred[sel] = normalizer.denormalize_target(forward(model, batch))[:, 0]
    return pred, inside
