import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sno.dataio import (
    CHECKPOINT_MAGIC, SAMPLE_MAGIC, Normalizer, fit_normalizer, load_checkpoint, read_container,
    read_field, read_sample, save_checkpoint, write_container, write_field, write_sample,
)
from sno.errors import ConfigError, DegenerateFeatureError, FormatError
from sno.model import build_model, forward
from sno.optim import OptimState, Trainer, TrainConfig
from sno.sampler import full_indices, gather_batch

from helpers import desk_dataset, random_batch, small_config


@pytest.fixture(scope="module")
def records():
    return desk_dataset(3, 4, 4, 4, 3, seed=2)


def expected_length(header_len, shapes):
    return 4 + 4 + 8 + header_len + 8 * sum(int(np.prod(s)) for s in shapes)


def test_sample_round_trip_is_bit_exact(tmp_path, records):
    rec = records[0]
    path = tmp_path / "a.snod"
    write_sample(path, rec)
    back = read_sample(path)
    assert back.grid == rec.grid and back.well_cell == rec.well_cell and back.name == rec.name
    for name in ("porosity", "perm", "states", "homo"):
        assert getattr(back, name).tobytes() == getattr(rec, name).tobytes()


def test_file_length_matches_layout(tmp_path, records):
    path = tmp_path / "a.snod"
    write_sample(path, records[0])
    raw = path.read_bytes()
    magic, version, hlen = struct.unpack_from("<4sIQ", raw)
    assert magic == SAMPLE_MAGIC and version == 1
    g = records[0].grid
    assert len(raw) == expected_length(hlen, [(g.n_cells,), (3, g.n_cells), (g.nt, g.n_cells)])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(1, 3)), min_size=0, max_size=4), st.integers(0, 2**31))
def test_container_round_trip(tmp_path_factory, shapes, seed):
    rng = np.random.default_rng(seed)
    arrays = {f"a{i}": rng.normal(size=s) for i, s in enumerate(shapes)}
    path = tmp_path_factory.mktemp("c") / "x.bin"
    write_container(path, SAMPLE_MAGIC, {"k": "v"}, arrays)
    header, back = read_container(path, SAMPLE_MAGIC)
    assert header["k"] == "v" and list(back) == list(arrays)
    assert all(back[k].tobytes() == arrays[k].tobytes() and back[k].shape == arrays[k].shape for k in arrays)


def test_corruption_is_detected(tmp_path, records):
    path = tmp_path / "a.snod"
    write_sample(path, records[0])
    raw = bytearray(path.read_bytes())
    cases = {
        "magic": lambda b: b.__setitem__(0, ord("X")),
        "version": lambda b: b.__setitem__(4, 9),
        "header": lambda b: b.__setitem__(16, ord("}")),
        "truncated": lambda b: b.__delitem__(slice(-8, None)),
        "trailing": lambda b: b.extend(b"\0" * 8),
        "short": lambda b: b.__delitem__(slice(10, None)),
    }
    for name, corrupt in cases.items():
        bad = bytearray(raw)
        corrupt(bad)
        p = tmp_path / f"{name}.snod"
        p.write_bytes(bytes(bad))
        with pytest.raises(FormatError):
            read_sample(p)


def test_kind_mismatch(tmp_path, records):
    p = tmp_path / "f.snod"
    write_field(p, records[0].grid, "difference", np.ones((2, 3)), {"sample": "s"})
    header, arr = read_field(p)
    assert header["sample"] == "s" and arr.shape == (2, 3)
    with pytest.raises(FormatError, match="not a sample"):
        read_sample(p)
    with pytest.raises(FormatError, match="bad magic"):
        load_checkpoint(p)


def test_normalizer_examples():
    norm = Normalizer([0, 0, 0, 0], [1, 1, 1, 1], [0] * 4, [2] * 4, [1, 1], [3, 3], -1.0, 3.0)
    assert norm.normalize_target([[-1.0], [1.0], [3.0]]).ravel().tolist() == [-1.0, 0.0, 1.0]
    # values outside the fitted range are not clamped
    assert norm.normalize_target([[7.0]])[0, 0] == 3.0
    assert norm.denormalize_target([[0.0]])[0, 0] == 1.0
    assert np.allclose(norm.denormalize_topo(norm.normalize_topo([[0.3, 0.1, 0.9, 0.5]])), [[0.3, 0.1, 0.9, 0.5]])
    assert Normalizer.from_dict(norm.to_dict()).to_dict() == norm.to_dict()


def test_degenerate_feature_names_columns():
    with pytest.raises(DegenerateFeatureError) as exc:
        Normalizer([0] * 4, [1] * 4, [0] * 4, [1, 1, 0, 1], [1, 2], [1, 3], 0.0, 1.0)
    assert set(exc.value.features) == {"log_ky", "injection_rate"}
    with pytest.raises(ConfigError):
        fit_normalizer([])


def test_fit_uses_training_records_only(records):
    norm = fit_normalizer(records[:2])
    assert norm.target_hi == max(r.states.max() for r in records[:2])
    b = gather_batch(records[2], full_indices(records[2].grid), norm)
    raw = gather_batch(records[2], full_indices(records[2].grid))
    assert np.allclose(norm.denormalize_target(b.target), raw.target, rtol=1e-12, atol=1e-15)
    assert b.topo.min() >= -1 and b.topo.max() <= 1


def test_checkpoint_round_trip(tmp_path, records):
    model = build_model(small_config(dropout_rate=0.3, seed=4))
    state = OptimState.zeros_like(model.params)
    state.m["decoder.b"][0] = 0.5
    state.step_c = 7
    norm = fit_normalizer(records)
    path = tmp_path / "c.snoc"
    save_checkpoint(path, model, state, norm, step=7, seed=3, extra={"note": [1, 2]})
    ck = load_checkpoint(path)
    assert ck.step == 7 and ck.seed == 3 and ck.extra == {"note": [1, 2]}
    assert ck.optim_state.step_c == 7 and ck.optim_state.m["decoder.b"][0] == 0.5
    assert ck.normalizer.to_dict() == norm.to_dict()
    batch = random_batch(50, np.random.default_rng(0))
    assert np.array_equal(forward(model.eval(), batch), forward(ck.model.eval(), batch))
    raw = path.read_bytes()
    assert raw[:4] == CHECKPOINT_MAGIC
    with pytest.raises(FormatError):
        read_sample(path)


def test_resume_matches_uninterrupted_run(tmp_path, records):
    cfg = TrainConfig(n_sub=32, outer_steps=6, inner_steps=4, eta_outer=1e-3, eta_inner=1e-4, seed=5)
    straight = Trainer(build_model(small_config(dropout_rate=0.3)), records, cfg)
    straight.run()

    first = Trainer(build_model(small_config(dropout_rate=0.3)), records, cfg)
    first.run(5)
    path = tmp_path / "mid.snoc"
    save_checkpoint(path, first.model, first.optim_state, first.normalizer, step=first.step,
                    extra={"rng_state": first.rng_state()})
    ck = load_checkpoint(path)
    resumed = Trainer(ck.model, records, cfg, ck.normalizer, ck.optim_state, ck.step,
                      Trainer.rng_from_state(ck.extra["rng_state"]))
    resumed.run()
    assert resumed.step == straight.step == 10
    for k in straight.model.params:
        assert np.max(np.abs(straight.model.params[k] - resumed.model.params[k])) <= 1e-12
    assert [r.mse for r in straight.history[5:]] == [r.mse for r in resumed.history]
