"""Binary containers for samples ("SNOD") and checkpoints ("SNOC"), and the
min-max normalizer fitted on the training split.

Container layout (all integers little-endian)::

    magic       4 bytes   b"SNOD" or b"SNOC"
    version     u32
    header_len  u64
    header      header_len bytes of UTF-8 JSON
    arrays      float64 little-endian, in the order of header["arrays"]

``header["arrays"]`` is a list of ``{"name": str, "shape": [int, ...]}``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from sno.errors import ConfigError, DegenerateFeatureError, FormatError
from sno.fom import SampleRecord
from sno.model import Model, ModelConfig, QueryBatch, build_model, param_names
from sno.sampler import GridSpec, hetero_features

SAMPLE_MAGIC = b"SNOD"
CHECKPOINT_MAGIC = b"SNOC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_F64 = np.dtype("<f8")

TOPO_NAMES = ("t", "x", "y", "z")
HETERO_NAMES = ("porosity", "log_kx", "log_ky", "log_kz")
HOMO_NAMES = ("injection_rate", "injection_duration")
TARGET_NAMES = ("state",)


# --------------------------------------------------------------------------
# generic container


def write_container(path, magic, header, arrays):
    """Write named float64 arrays after a JSON header. ``arrays`` is an ordered mapping."""
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(magic, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype=_F64).tobytes())


def read_container(path, magic):
    """Return ``(header, arrays)``; raises :class:`FormatError` on any malformed input."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a container prefix ({len(data)} bytes)")
    got_magic, version, hlen = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    start = _PREFIX.size
    if start + hlen > len(data):
        raise FormatError(f"{path}: header length {hlen} runs past end of file")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
        specs = [(a["name"], tuple(int(s) for s in a["shape"])) for a in header["arrays"]]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed JSON header ({exc})") from None
    offset = start + hlen
    arrays = {}
    for name, shape in specs:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise FormatError(f"{path}: array {name!r} truncated ({len(data) - offset} of {8 * count} bytes)")
        arrays[name] = np.frombuffer(data, dtype=_F64, count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after declared arrays")
    return header, arrays


# --------------------------------------------------------------------------
# samples


def write_sample(path, record: SampleRecord):
    header = {
        "kind": "sample",
        "name": record.name,
        "grid": record.grid.to_dict(),
        "homo": {k: float(v) for k, v in zip(HOMO_NAMES, record.homo)},
        "well_cell": [int(v) for v in record.well_cell],
    }
    arrays = {"porosity": record.porosity, "perm": record.perm, "states": record.states}
    write_container(path, SAMPLE_MAGIC, header, arrays)


def read_sample(path) -> SampleRecord:
    header, arrays = read_container(path, SAMPLE_MAGIC)
    if header.get("kind") != "sample":
        raise FormatError(f"{path}: container kind {header.get('kind')!r} is not a sample")
    try:
        grid = GridSpec.from_dict(header["grid"])
        homo = np.array([float(header["homo"][k]) for k in HOMO_NAMES])
        well = tuple(int(v) for v in header["well_cell"])
        porosity, perm, states = arrays["porosity"], arrays["perm"], arrays["states"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete sample header or arrays ({exc})") from None
    n = grid.n_cells
    for name, arr, want in (("porosity", porosity, (n,)), ("perm", perm, (3, n)), ("states", states, (grid.nt, n))):
        if arr.shape != want:
            raise FormatError(f"{path}: array {name!r} has shape {arr.shape}, grid implies {want}")
    return SampleRecord(grid, porosity, perm, homo, well, states, name=header.get("name"))


def write_field(path, grid: GridSpec, name, values, meta=None):
    """Export a per-cell field series (e.g. pointwise differences) in the sample container."""
    header = {"kind": "field", "grid": grid.to_dict(), "field": name, **(meta or {})}
    write_container(path, SAMPLE_MAGIC, header, {name: values})


def read_field(path):
    header, arrays = read_container(path, SAMPLE_MAGIC)
    if header.get("kind") != "field":
        raise FormatError(f"{path}: container kind {header.get('kind')!r} is not a field")
    return header, arrays[header["field"]]


# --------------------------------------------------------------------------
# normalization


def _minmax_to_unit(x, lo, hi):
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def _unit_to_minmax(y, lo, hi):
    return lo + (y + 1.0) * 0.5 * (hi - lo)


@dataclass
class Normalizer:
    """Per-feature min/max in physical units; maps each onto [-1, 1] without clamping."""

    topo_lo: np.ndarray
    topo_hi: np.ndarray
    hetero_lo: np.ndarray
    hetero_hi: np.ndarray
    homo_lo: np.ndarray
    homo_hi: np.ndarray
    target_lo: float
    target_hi: float

    def __post_init__(self):
        for name in ("topo_lo", "topo_hi", "hetero_lo", "hetero_hi", "homo_lo", "homo_hi"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.target_lo = float(self.target_lo)
        self.target_hi = float(self.target_hi)
        bad = []
        for names, lo, hi in ((TOPO_NAMES, self.topo_lo, self.topo_hi),
                              (HETERO_NAMES, self.hetero_lo, self.hetero_hi),
                              (HOMO_NAMES, self.homo_lo, self.homo_hi),
                              (TARGET_NAMES, [self.target_lo], [self.target_hi])):
            bad += [n for n, a, b in zip(names, lo, hi) if not a < b]
        if bad:
            raise DegenerateFeatureError(bad)

    def normalize_batch(self, batch: QueryBatch) -> QueryBatch:
        return QueryBatch(
            _minmax_to_unit(batch.topo, self.topo_lo, self.topo_hi),
            _minmax_to_unit(batch.hetero, self.hetero_lo, self.hetero_hi),
            _minmax_to_unit(batch.homo, self.homo_lo, self.homo_hi),
            None if batch.target is None else self.normalize_target(batch.target),
        )

    def normalize_target(self, y):
        return _minmax_to_unit(np.asarray(y, dtype=np.float64), self.target_lo, self.target_hi)

    def denormalize_target(self, y):
        return _unit_to_minmax(np.asarray(y, dtype=np.float64), self.target_lo, self.target_hi)

    def normalize_topo(self, x):
        return _minmax_to_unit(np.asarray(x, dtype=np.float64), self.topo_lo, self.topo_hi)

    def denormalize_topo(self, y):
        return _unit_to_minmax(np.asarray(y, dtype=np.float64), self.topo_lo, self.topo_hi)

    def to_dict(self):
        return {
            "topo": [self.topo_lo.tolist(), self.topo_hi.tolist()],
            "hetero": [self.hetero_lo.tolist(), self.hetero_hi.tolist()],
            "homo": [self.homo_lo.tolist(), self.homo_hi.tolist()],
            "target": [self.target_lo, self.target_hi],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["topo"][0], d["topo"][1], d["hetero"][0], d["hetero"][1],
                   d["homo"][0], d["homo"][1], d["target"][0], d["target"][1])


def fit_normalizer(records) -> Normalizer:
    """Fit min/max statistics on training records only.

    Coordinates use the grid extents (time from 0 to the horizon), so every
    cell centre lands inside [-1, 1]; all other features use data min/max.
    """
    records = list(records)
    if not records:
        raise ConfigError("fit_normalizer needs at least one training record")
    t_hi = max(r.grid.t_end for r in records)
    topo_lo = [0.0] + [min(r.grid.extents[a][0] for r in records) for a in range(3)]
    topo_hi = [t_hi] + [max(r.grid.extents[a][1] for r in records) for a in range(3)]
    het = [hetero_features(r) for r in records]
    homo = np.array([r.homo for r in records])
    return Normalizer(
        topo_lo, topo_hi,
        np.min([h.min(axis=0) for h in het], axis=0), np.max([h.max(axis=0) for h in het], axis=0),
        homo.min(axis=0), homo.max(axis=0),
        min(float(r.states.min()) for r in records), max(float(r.states.max()) for r in records),
    )


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Model, optim_state=None, normalizer: Normalizer = None, step=0, seed=0,
                    extra=None):
    """Persist parameters, ADAM moments and normalizer.

    ``extra`` is any JSON-serialisable dict (training config, RNG state, split).
    """
    header = {
        "kind": "checkpoint",
        "model_config": model.config.to_dict(),
        "normalizer": None if normalizer is None else normalizer.to_dict(),
        "step": int(step),
        "seed": int(seed),
        "extra": extra or {},
    }
    arrays = {f"param/{k}": model.params[k] for k in param_names(model.config)}
    if optim_state is not None:
        header["optim"] = optim_state.meta()
        for k in param_names(model.config):
            arrays[f"m/{k}"] = optim_state.m[k]
            arrays[f"v/{k}"] = optim_state.v[k]
    write_container(path, CHECKPOINT_MAGIC, header, arrays)


@dataclass
class Checkpoint:
    model: Model
    optim_state: object
    normalizer: Normalizer
    step: int
    seed: int
    extra: dict


def load_checkpoint(path) -> Checkpoint:
    from sno.optim import OptimState

    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    if header.get("kind") != "checkpoint":
        raise FormatError(f"{path}: container kind {header.get('kind')!r} is not a checkpoint")
    try:
        config = ModelConfig.from_dict(header["model_config"])
        model = build_model(config)
    except (KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f"{path}: invalid model config ({exc})") from None
    for k in param_names(config):
        key = f"param/{k}"
        if key not in arrays:
            raise FormatError(f"{path}: missing parameter {k!r}")
        if arrays[key].shape != model.params[k].shape:
            raise FormatError(f"{path}: parameter {k!r} has shape {arrays[key].shape}, config implies {model.params[k].shape}")
        model.params[k] = arrays[key]
    optim_state = None
    if "optim" in header:
        optim_state = OptimState.from_meta(header["optim"],
                                           {k: arrays[f"m/{k}"] for k in param_names(config)},
                                           {k: arrays[f"v/{k}"] for k in param_names(config)})
    normalizer = None if header["normalizer"] is None else Normalizer.from_dict(header["normalizer"])
    return Checkpoint(model, optim_state, normalizer, int(header["step"]), int(header["seed"]), header.get("extra", {}))


__all__ = [
    "CHECKPOINT_MAGIC", "Checkpoint", "FORMAT_VERSION", "Normalizer", "SAMPLE_MAGIC",
    "fit_normalizer", "load_checkpoint", "read_container", "read_field", "read_sample", "save_checkpoint",
    "write_container", "write_field", "write_sample",
]
