"""Error metrics over (timestamps x points) arrays, in physical units."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from sno.errors import DimensionError, EmptyBatchError

RELATIVE_ERROR_FORMULA = "rmse / mean(|S|)"


def _pair(S, Shat, ndim=2):
    S = np.asarray(S, dtype=np.float64)
    Shat = np.asarray(Shat, dtype=np.float64)
    if S.shape != Shat.shape:
        raise DimensionError(f"truth {S.shape} and prediction {Shat.shape} differ in shape")
    if S.ndim != ndim:
        raise DimensionError(f"expected {ndim}-D arrays, got {S.ndim}-D")
    if S.size == 0:
        raise EmptyBatchError("metrics need at least one point")
    return S, Shat


def rmse(S, Shat) -> float:
    S, Shat = _pair(S, Shat)
    d = S - Shat
    return float(np.sqrt(np.mean(d * d)))


def mae(S, Shat) -> float:
    S, Shat = _pair(S, Shat)
    return float(np.mean(np.abs(S - Shat)))


def max_mae(S, Shat):
    """Per-timestamp MAE series and its maximum."""
    S, Shat = _pair(S, Shat)
    series = np.mean(np.abs(S - Shat), axis=1)
    return series, float(series.max())


def pointwise_difference(S_t, Shat_t):
    """|S - Shat| at a single timestamp."""
    S_t, Shat_t = _pair(S_t, Shat_t, ndim=1)
    return np.abs(S_t - Shat_t)


@dataclass
class MetricsReport:
    rmse: float
    mae: float
    max_mae_series: list
    max_mae: float
    n_points: int
    n_timestamps: int
    mean_abs_state: float
    relative_error: float

    def to_dict(self):
        d = asdict(self)
        if not np.isfinite(d["relative_error"]):
            d["relative_error"] = None  # JSON has no infinity
        return d


def report(S, Shat) -> MetricsReport:
    S, Shat = _pair(S, Shat)
    series, mx = max_mae(S, Shat)
    r = rmse(S, Shat)
    scale = float(np.mean(np.abs(S)))
    return MetricsReport(
        rmse=r,
        mae=mae(S, Shat),
        max_mae_series=[float(v) for v in series],
        max_mae=mx,
        n_points=int(S.shape[1]),
        n_timestamps=int(S.shape[0]),
        mean_abs_state=scale,
        relative_error=r / scale if scale > 0 else float("inf"),
    )


_METRICS_PROPS = {
    "rmse": {"type": "number", "minimum": 0},
    "mae": {"type": "number", "minimum": 0},
    "max_mae_series": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
    "max_mae": {"type": "number", "minimum": 0},
    "n_points": {"type": "integer", "minimum": 1},
    "n_timestamps": {"type": "integer", "minimum": 1},
    "mean_abs_state": {"type": "number", "minimum": 0},
    "relative_error": {"type": ["number", "null"]},
}

# JSON schema of the evaluation report written by ``sno eval``.
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["relative_error_formula", "split", "samples", "aggregate"],
    "properties": {
        "relative_error_formula": {"const": RELATIVE_ERROR_FORMULA},
        "split": {"type": "string"},
        "samples": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", *_METRICS_PROPS],
                "properties": {"name": {"type": "string"}, "well_cell": {"type": "array"}, **_METRICS_PROPS},
            },
        },
        "aggregate": {"type": "object", "required": list(_METRICS_PROPS), "properties": _METRICS_PROPS},
    },
}
