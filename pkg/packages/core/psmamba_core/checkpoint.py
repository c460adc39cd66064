"""
psmamba_core.checkpoint
~~~~~~~~~~~~~~~~~~~~~~~
Binary checkpoint format.

Layout (all integers little-endian)::

    b"PSMB"                  magic
    u32                      format version (1)
    u32                      record count
    record * count:
        u32 + bytes          name, UTF-8
        u8                   dtype code (0 f32, 1 f64, 2 i64, 3 u8)
        u8                   rank
        u32 * rank           dims
        bytes                values, row-major little-endian

Model parameters use their dotted names. Optimizer state is stored as
``optim.m.<name>``, ``optim.v.<name>`` and a scalar ``optim.step``; the model
and task hyperparameters travel as JSON bytes in ``meta.config``.
"""

from __future__ import annotations

import json
import logging
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from psmamba_core.errors import CheckpointError
from psmamba_core.models import ModelConfig, RestoreTask
from psmamba_core.network import HierarchyParams, build_hierarchy
from psmamba_core.optim import ParamStore
from psmamba_core.tensor import Array

logger = logging.getLogger(__name__)

MAGIC = b"PSMB"
FORMAT_VERSION = 1

_DTYPE_BY_CODE: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i8"),
    3: np.dtype("u1"),
}
_CODE_BY_KIND: dict[str, int] = {"float32": 0, "float64": 1, "int64": 2, "uint8": 3}

OPTIM_M = "optim.m."
OPTIM_V = "optim.v."
OPTIM_STEP = "optim.step"
META_CONFIG = "meta.config"


# ---------------------------------------------------------------------------
# Record I/O
# ---------------------------------------------------------------------------


def _encode(name: str, value: Array) -> bytes:
    arr = np.asarray(value)
    code = _CODE_BY_KIND.get(arr.dtype.name)
    if code is None:
        raise CheckpointError(f"record {name!r}: unsupported dtype {arr.dtype}", record=name)
    raw_name = name.encode("utf-8")
    head = struct.pack("<I", len(raw_name)) + raw_name + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPE_BY_CODE[code]).tobytes()


def write_records(path: str | Path, records: Mapping[str, Array]) -> Path:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(records))]
    chunks += [_encode(name, value) for name, value in records.items()]
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, buf: bytes, path: str) -> None:
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated while reading {what}", path=self.path, record=what)
        out = self.buf[self.pos : self.pos + size]
        self.pos += size
        return out

    def unpack(self, fmt: str, what: str) -> tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_records(path: str | Path) -> dict[str, Array]:
    spath = str(path)
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {spath}: {exc}", path=spath) from exc
    r = _Reader(buf, spath)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{spath} is not a psmamba checkpoint (bad magic)", path=spath, record="magic")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{spath}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})",
            path=spath,
            record="version",
        )
    (count,) = r.unpack("<I", "record count")
    records: dict[str, Array] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I", "record name")
        try:
            name = r.take(name_len, "record name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{spath}: record name is not UTF-8", path=spath) from exc
        code, rank = r.unpack("<BB", name)
        if code not in _DTYPE_BY_CODE:
            raise CheckpointError(f"{spath}: record {name!r} has unknown dtype code {code}", path=spath, record=name)
        dims = r.unpack(f"<{rank}I", name)
        dtype = _DTYPE_BY_CODE[code]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        values = np.frombuffer(r.take(size, name), dtype=dtype).reshape(dims)
        records[name] = values.astype(dtype.newbyteorder("="))
    if r.pos != len(buf):
        raise CheckpointError(f"{spath}: {len(buf) - r.pos} trailing bytes", path=spath)
    return records


# ---------------------------------------------------------------------------
# Model checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    path: str
    params: dict[str, Array]
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)
    step: int | None = None
    model: ModelConfig | None = None
    task: RestoreTask | None = None

    @property
    def has_optimizer(self) -> bool:
        return self.step is not None


def _meta_bytes(hp: HierarchyParams) -> Array:
    payload = {"model": hp.config.model_dump(mode="json"), "task": hp.task.model_dump(mode="json")}
    return np.frombuffer(json.dumps(payload, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def save_checkpoint(path: str | Path, hp: HierarchyParams, store: ParamStore | None = None) -> Path:
    """Write parameters, hyperparameters and (optionally) Adam state."""
    records: dict[str, Array] = {META_CONFIG: _meta_bytes(hp)}
    records |= {name: t.data for name, t in hp.named_parameters().items()}
    if store is not None:
        records |= {f"{OPTIM_M}{name}": arr for name, arr in store.m.items()}
        records |= {f"{OPTIM_V}{name}": arr for name, arr in store.v.items()}
        records[OPTIM_STEP] = np.array(store.step, dtype=np.int64)
    out = write_records(path, records)
    logger.info(
        "checkpoint written",
        extra={"path": str(out), "records": len(records), "step": store.step if store else None},
    )
    return out


def load_checkpoint(path: str | Path) -> Checkpoint:
    spath = str(path)
    records = read_records(path)
    ckpt = Checkpoint(path=spath, params={})
    for name, value in records.items():
        if name == META_CONFIG:
            try:
                meta = json.loads(value.tobytes().decode("utf-8"))
                ckpt.model = ModelConfig.model_validate(meta["model"])
                ckpt.task = RestoreTask.model_validate(meta["task"])
            except (ValueError, KeyError) as exc:
                raise CheckpointError(f"{spath}: unreadable {META_CONFIG}: {exc}", path=spath, record=name) from exc
        elif name == OPTIM_STEP:
            ckpt.step = int(value)
        elif name.startswith(OPTIM_M):
            ckpt.m[name.removeprefix(OPTIM_M)] = value
        elif name.startswith(OPTIM_V):
            ckpt.v[name.removeprefix(OPTIM_V)] = value
        else:
            ckpt.params[name] = value
    return ckpt


def apply_checkpoint(hp: HierarchyParams, ckpt: Checkpoint) -> None:
    """Copy checkpoint values into ``hp`` in its current dtype; names and shapes must match exactly."""
    named = hp.named_parameters()
    unknown = sorted(set(ckpt.params) - set(named))
    if unknown:
        raise CheckpointError(f"{ckpt.path}: unknown record {unknown[0]!r}", path=ckpt.path, record=unknown[0])
    for name, tensor in named.items():
        if name not in ckpt.params:
            raise CheckpointError(f"{ckpt.path}: missing record {name!r}", path=ckpt.path, record=name)
        value = ckpt.params[name]
        if value.shape != tensor.shape:
            raise CheckpointError(
                f"{ckpt.path}: record {name!r} has shape {value.shape}, model expects {tensor.shape}",
                path=ckpt.path,
                record=name,
            )
        tensor.data[...] = value
        tensor.grad = None


def restore_store(hp: HierarchyParams, ckpt: Checkpoint) -> ParamStore:
    """ParamStore over ``hp`` with Adam moments and step taken from ``ckpt`` when present."""
    store = ParamStore.from_named(hp.named_parameters())
    if not ckpt.has_optimizer:
        return store
    for name in store:
        for source, target in ((ckpt.m, store.m), (ckpt.v, store.v)):
            if name not in source:
                raise CheckpointError(f"{ckpt.path}: missing optimizer state for {name!r}", path=ckpt.path, record=name)
            if source[name].shape != target[name].shape:
                raise CheckpointError(
                    f"{ckpt.path}: optimizer state for {name!r} has shape {source[name].shape}",
                    path=ckpt.path,
                    record=name,
                )
            target[name][...] = source[name]
    store.step = ckpt.step or 0
    return store


def load_model(path: str | Path) -> tuple[HierarchyParams, Checkpoint]:
    """Rebuild the network described by ``meta.config`` and load its weights."""
    ckpt = load_checkpoint(path)
    if ckpt.model is None or ckpt.task is None:
        raise CheckpointError(f"{ckpt.path}: no {META_CONFIG} record", path=ckpt.path, record=META_CONFIG)
    hp = build_hierarchy(ckpt.model, ckpt.task, rng=0)
    apply_checkpoint(hp, ckpt)
    return hp, ckpt
