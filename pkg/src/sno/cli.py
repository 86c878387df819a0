"""Command-line entry points: ``sno gen-data | train | eval | infer``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sno.dataio import fit_normalizer, load_checkpoint, read_sample, save_checkpoint, write_field, write_sample
from sno.errors import DivergenceError, SnoError
from sno.fom import FieldSpec, build_dataset
from sno.inference import evaluate_record, predict_points
from sno.metrics import RELATIVE_ERROR_FORMULA, pointwise_difference, report
from sno.model import ModelConfig, build_model, count_macs, count_params
from sno.optim import Trainer, TrainConfig, write_loss_csv
from sno.sampler import GridSpec, hetero_features

log = logging.getLogger("sno")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

MANIFEST_NAME = "manifest.json"
CHECKPOINT_NAME = "checkpoint.snoc"
LOSS_NAME = "loss.csv"


class UsageError(SnoError):
    """Bad command-line input; reported with exit code 2."""


def _default_fields():
    return {"grid": GridSpec(16, 16, 8, 10, z_extent=(0.0, 0.5)).to_dict()}


@dataclass
class RunConfig:
    fields: dict = field(default_factory=_default_fields)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    train_fraction: float = 0.9
    eval_batch_size: int = 4096

    def field_spec(self) -> FieldSpec:
        return FieldSpec.from_dict(dict(self.fields))

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(dict(self.model))

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(dict(self.train))

    @classmethod
    def load(cls, path=None):
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError(f"config {path} must be a JSON object")
        unknown = set(raw) - {"fields", "model", "train", "train_fraction", "eval_batch_size", "paths"}
        if unknown:
            raise UsageError(f"config {path}: unknown sections {sorted(unknown)}")
        raw.pop("paths", None)
        cfg = cls(**raw)
        if "grid" not in cfg.fields:
            cfg.fields = {**_default_fields(), **cfg.fields}
        # fail early on bad sections
        try:
            cfg.field_spec()
            cfg.model_config().validate()
            cfg.train_config()
        except TypeError as exc:
            raise UsageError(f"config {path}: {exc}") from None
        if not 0.0 < cfg.train_fraction <= 1.0:
            raise UsageError(f"train_fraction must lie in (0, 1], got {cfg.train_fraction}")
        return cfg


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _spec_hash(spec: FieldSpec):
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()


# --------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args):
    cfg = RunConfig.load(args.config)
    spec = cfg.field_spec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.samples < 1:
        raise UsageError(f"--samples must be >= 1, got {args.samples}")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    records = build_dataset(args.samples, spec, np.random.default_rng(spec.seed))
    files = []
    for rec in records:
        path = out / f"{rec.name}.snod"
        write_sample(path, rec)
        files.append({"name": rec.name, "path": path.name, "sha256": _sha256(path)})
    manifest = {
        "n_samples": len(files),
        "seed": spec.seed,
        "spec_hash": _spec_hash(spec),
        "fields": spec.to_dict(),
        "files": files,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(files)} samples and {MANIFEST_NAME} to {out}")
    return EXIT_OK


def _load_manifest(data):
    path = Path(data)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
        entries = manifest["files"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read dataset manifest {path}: {exc}") from None
    return path.parent, manifest, entries


def _read_records(root, entries, names=None):
    by_name = {e["name"]: e for e in entries}
    names = [e["name"] for e in entries] if names is None else names
    records = []
    for name in names:
        if name not in by_name:
            raise UsageError(f"sample {name!r} is not listed in the manifest")
        try:
            records.append(read_sample(root / by_name[name]["path"]))
        except OSError as exc:
            raise UsageError(f"cannot read sample {name!r}: {exc}") from None
    return records


def split_names(names, fraction, seed):
    """Deterministic train/test split; keeps at least one test case when there are two or more samples."""
    order = np.random.default_rng(seed).permutation(len(names))
    n_train = int(round(fraction * len(names)))
    n_train = max(1, min(n_train, len(names) - 1 if len(names) > 1 else 1))
    train = [names[i] for i in sorted(order[:n_train])]
    test = [names[i] for i in sorted(order[n_train:])]
    return train, test


# --------------------------------------------------------------------------
# train


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    tcfg = cfg.train_config()
    mcfg = cfg.model_config()
    root, manifest, entries = _load_manifest(args.data)
    names = [e["name"] for e in entries]
    if not names:
        raise UsageError("dataset manifest lists no samples")
    train_names, test_names = split_names(names, cfg.train_fraction, tcfg.seed)
    train_records = _read_records(root, entries, train_names)
    normalizer = fit_normalizer(train_records)

    model = build_model(mcfg)
    print(f"trainable parameters: {count_params(model)}")
    print(f"multiply-accumulates per query point: {count_macs(model)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    trainer = Trainer(model, train_records, tcfg, normalizer)
    try:
        trainer.run(log_every=args.log_every)
    finally:
        write_loss_csv(out / LOSS_NAME, trainer.history)
    extra = {
        "train_config": tcfg.to_dict(),
        "split": {"train": train_names, "test": test_names},
        "rng_state": trainer.rng_state(),
        "spec_hash": manifest.get("spec_hash"),
    }
    save_checkpoint(out / CHECKPOINT_NAME, model, trainer.optim_state, normalizer,
                    step=trainer.step, seed=tcfg.seed, extra=extra)
    final = trainer.history[-1].mse if trainer.history else float("nan")
    print(f"trained {trainer.step} steps (final batch mse {final:.6e}); wrote {out / CHECKPOINT_NAME}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


def _aggregate(truths, preds):
    return report(np.concatenate(truths, axis=1), np.concatenate(preds, axis=1)).to_dict()


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    root, manifest, entries = _load_manifest(args.data)
    split = ckpt.extra.get("split", {})
    if args.split == "all":
        names = [e["name"] for e in entries]
    else:
        if args.split not in split:
            raise UsageError(f"checkpoint has no recorded {args.split!r} split")
        names = split[args.split]
    if not names:
        raise UsageError(f"split {args.split!r} is empty")
    if ckpt.extra.get("spec_hash") not in (None, manifest.get("spec_hash")):
        raise UsageError("checkpoint was trained on a dataset with a different field spec")
    records = _read_records(root, entries, names)
    if args.batch_size < 1:
        raise UsageError("--batch-size must be >= 1")

    rng = np.random.default_rng(ckpt.seed)
    samples, truths, preds = [], [], []
    diff_dir = Path(args.difference) if args.difference else None
    if diff_dir is not None:
        diff_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        cells = None
        if args.points is not None:
            if args.points < 1:
                raise UsageError("--points must be >= 1")
            cells = np.sort(rng.choice(rec.grid.n_cells, size=min(args.points, rec.grid.n_cells), replace=False))
        rep, pred = evaluate_record(ckpt.model, rec, ckpt.normalizer, args.batch_size, cells)
        truth = rec.states if cells is None else rec.states[:, cells]
        samples.append({"name": rec.name, "well_cell": list(rec.well_cell), **rep.to_dict()})
        truths.append(truth)
        preds.append(pred)
        if diff_dir is not None and cells is None:
            diff = np.stack([pointwise_difference(truth[i], pred[i]) for i in range(rec.grid.nt)])
            write_field(diff_dir / f"{rec.name}_difference.snod", rec.grid, "difference", diff,
                        meta={"sample": rec.name})
    doc = {
        "relative_error_formula": RELATIVE_ERROR_FORMULA,
        "split": args.split,
        "samples": samples,
        "aggregate": _aggregate(truths, preds),
    }
    Path(args.report).write_text(json.dumps(doc, indent=2) + "\n")
    agg = doc["aggregate"]
    print(f"{len(samples)} samples: rmse {agg['rmse']:.6g} mae {agg['mae']:.6g} "
          f"max_mae {agg['max_mae']:.6g} relative {agg['relative_error'] or float('inf'):.4%}")
    return EXIT_OK


# --------------------------------------------------------------------------
# infer


def _parse_rows(rows):
    pts = np.full((len(rows), 4), np.nan)
    for i, row in enumerate(rows):
        try:
            if len(row) == 4:
                pts[i] = [float(v) for v in row]
        except ValueError:
            pass
    return pts


def infer_stream(model, record, normalizer, reader, writer, batch_size=4096):
    """Predict every row of ``reader`` in order, holding at most ``batch_size`` rows at once.

    Returns ``(n_rows, n_failed)``.
    """
    het_table = hetero_features(record)
    n_rows = n_failed = 0
    while True:
        rows = []
        for row in reader:
            rows.append(row)
            if len(rows) == batch_size:
                break
        if not rows:
            break
        pts = _parse_rows(rows)
        pred, inside = predict_points(model, record, normalizer, pts, het_table)
        for row, value, ok in zip(rows, pred, inside):
            if ok:
                writer.writerow([*row, repr(float(value)), "ok"])
            else:
                n_failed += 1
                status = "out_of_domain" if np.isfinite(_parse_rows([row])).all() else "invalid"
                writer.writerow([*(list(row) + [""] * 4)[:4], "", status])  # keep columns aligned
        n_rows += len(rows)
        if len(rows) < batch_size:
            break
    return n_rows, n_failed


def cmd_infer(args):
    ckpt = load_checkpoint(args.checkpoint)
    record = read_sample(args.sample)
    if args.batch_size < 1:
        raise UsageError("--batch-size must be >= 1")
    try:
        src = open(args.points, newline="")
    except OSError as exc:
        raise UsageError(f"cannot open points file: {exc}") from None
    with src, open(args.out, "w", newline="") as dst:
        reader = csv.reader(src)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "x", "y", "z"]:
            raise UsageError(f"points file must start with header 't,x,y,z', got {header}")
        writer = csv.writer(dst)
        writer.writerow(["t", "x", "y", "z", "prediction", "status"])
        n_rows, n_failed = infer_stream(ckpt.model, record, ckpt.normalizer, reader, writer, args.batch_size)
    print(f"predicted {n_rows - n_failed} of {n_rows} points; wrote {args.out}")
    if n_rows > 0 and n_failed == n_rows:
        return EXIT_CONFIG
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="sno", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic full-order-model samples")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="two-phase subsampled training")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="dataset directory or manifest.json")
    t.add_argument("--out", required=True)
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics on full grids of a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--split", default="test", choices=["train", "test", "all"])
    e.add_argument("--difference", help="directory for per-timestamp pointwise-difference fields")
    e.add_argument("--points", type=int, help="evaluate only this many random cells per sample")
    e.add_argument("--batch-size", type=int, default=4096)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict at arbitrary (t, x, y, z) points")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--sample", required=True)
    i.add_argument("--points", required=True, help="CSV with header t,x,y,z")
    i.add_argument("--out", required=True)
    i.add_argument("--batch-size", type=int, default=4096)
    i.set_defaults(func=cmd_infer)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SnoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
