"""
Tests for psmamba_core.checkpoint.

Covers: the record format, corruption handling, strict name and shape
matching, optimizer state and rebuilding a model from ``meta.config``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from psmamba_core import (
    FORMAT_VERSION,
    MAGIC,
    CheckpointError,
    HierarchyParams,
    ModelConfig,
    ParamStore,
    RestoreTask,
    SplitLevel,
    apply_checkpoint,
    build_hierarchy,
    load_checkpoint,
    load_model,
    read_records,
    restore_store,
    save_checkpoint,
    write_records,
)

TASK = RestoreTask.denoise(25)


def tiny_model(seed: int = 0) -> HierarchyParams:
    cfg = ModelConfig(c0=4, channel_step=4, n_blocks=1, state_n=2, reduction_r=2, split_level=SplitLevel.QUADRANTS)
    return build_hierarchy(cfg, TASK, rng=seed)


class TestRecords:
    def test_round_trip_preserves_dtype_and_shape(self, tmp_path: Path) -> None:
        records = {
            "a": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b": np.array([1.5, -2.25]),
            "c": np.array(7, dtype=np.int64),
            "d": np.frombuffer(b"hello", dtype=np.uint8),
        }
        out = read_records(write_records(tmp_path / "r.psmb", records))
        assert list(out) == list(records)
        for name, value in records.items():
            assert out[name].dtype == value.dtype
            np.testing.assert_array_equal(out[name], value)

    def test_header(self, tmp_path: Path) -> None:
        raw = write_records(tmp_path / "r.psmb", {"x": np.zeros(1, dtype=np.float32)}).read_bytes()
        assert raw[:4] == MAGIC
        assert struct.unpack("<II", raw[4:12]) == (FORMAT_VERSION, 1)

    def test_unsupported_dtype(self, tmp_path: Path) -> None:
        with pytest.raises(CheckpointError, match="dtype"):
            write_records(tmp_path / "r.psmb", {"x": np.zeros(2, dtype=np.int16)})

    def test_bad_magic(self, tmp_path: Path) -> None:
        path = tmp_path / "r.psmb"
        path.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(CheckpointError, match="magic") as info:
            read_records(path)
        assert info.value.path == str(path)

    def test_bad_version(self, tmp_path: Path) -> None:
        path = write_records(tmp_path / "r.psmb", {})
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version 99"):
            read_records(path)

    def test_truncated(self, tmp_path: Path) -> None:
        path = write_records(tmp_path / "r.psmb", {"x": np.zeros(16, dtype=np.float32)})
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError, match="truncated") as info:
            read_records(path)
        assert info.value.record == "x"

    def test_trailing_bytes(self, tmp_path: Path) -> None:
        path = write_records(tmp_path / "r.psmb", {"x": np.zeros(2, dtype=np.float32)})
        path.write_bytes(path.read_bytes() + b"\0\0")
        with pytest.raises(CheckpointError, match="2 trailing bytes"):
            read_records(path)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(CheckpointError, match="cannot read"):
            read_records(tmp_path / "absent.psmb")


class TestModelCheckpoints:
    def test_load_model_restores_everything(self, tmp_path: Path) -> None:
        hp = tiny_model(seed=3)
        path = save_checkpoint(tmp_path / "m.psmb", hp)
        loaded, ckpt = load_model(path)
        assert ckpt.model == hp.config
        assert ckpt.task == TASK
        assert not ckpt.has_optimizer
        for name, tensor in hp.named_parameters().items():
            np.testing.assert_array_equal(loaded.named_parameters()[name].data, tensor.data)

    def test_unknown_record(self, tmp_path: Path) -> None:
        hp = tiny_model()
        path = save_checkpoint(tmp_path / "m.psmb", hp)
        records = read_records(path)
        records["ghost.weight"] = np.zeros(3, dtype=np.float32)
        write_records(path, records)
        with pytest.raises(CheckpointError, match="unknown record") as info:
            load_model(path)
        assert info.value.record == "ghost.weight"

    def test_missing_record(self, tmp_path: Path) -> None:
        hp = tiny_model()
        path = save_checkpoint(tmp_path / "m.psmb", hp)
        records = read_records(path)
        del records["tail.bias"]
        write_records(path, records)
        with pytest.raises(CheckpointError, match="missing record") as info:
            load_model(path)
        assert info.value.record == "tail.bias"

    def test_shape_mismatch(self, tmp_path: Path) -> None:
        path = save_checkpoint(tmp_path / "m.psmb", tiny_model())
        ckpt = load_checkpoint(path)
        ckpt.params["tail.bias"] = np.zeros(7, dtype=np.float32)
        with pytest.raises(CheckpointError, match="shape"):
            apply_checkpoint(tiny_model(), ckpt)

    def test_missing_meta(self, tmp_path: Path) -> None:
        path = save_checkpoint(tmp_path / "m.psmb", tiny_model())
        records = read_records(path)
        del records["meta.config"]
        write_records(path, records)
        with pytest.raises(CheckpointError, match="meta.config"):
            load_model(path)

    def test_optimizer_state_round_trip(self, tmp_path: Path) -> None:
        hp = tiny_model()
        store = ParamStore.from_named(hp.named_parameters())
        rng = np.random.default_rng(0)
        for name in store:
            store.m[name][...] = rng.standard_normal(store.m[name].shape)
            store.v[name][...] = rng.uniform(size=store.v[name].shape)
        store.step = 42
        path = save_checkpoint(tmp_path / "m.psmb", hp, store)

        loaded, ckpt = load_model(path)
        assert ckpt.has_optimizer and ckpt.step == 42
        restored = restore_store(loaded, ckpt)
        assert restored.step == 42
        for name in store:
            np.testing.assert_array_equal(restored.m[name], store.m[name])
            np.testing.assert_array_equal(restored.v[name], store.v[name])

    def test_store_without_optimizer_starts_fresh(self, tmp_path: Path) -> None:
        loaded, ckpt = load_model(save_checkpoint(tmp_path / "m.psmb", tiny_model()))
        store = restore_store(loaded, ckpt)
        assert store.step == 0
        assert all(not store.m[name].any() for name in store)

    def test_write_is_atomic(self, tmp_path: Path) -> None:
        save_checkpoint(tmp_path / "m.psmb", tiny_model())
        assert sorted(p.name for p in tmp_path.iterdir()) == ["m.psmb"]
