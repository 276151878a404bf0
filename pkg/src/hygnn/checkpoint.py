"""Binary checkpoints.

Layout (little-endian)::

    b"HYGN"  u32 version
    repeated until EOF:
        u32 name_len, name (UTF-8), u32 rank, u64 dims[rank], f64 values[prod(dims)]

Record names are namespaced: ``param/<name>``, ``adam/m/<name>``,
``adam/v/<name>``, ``adam/step``, ``state/step`` and ``config/<key>``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .config import REDUCTIONS, TrainConfig
from .model import HyGnn
from .optim import AdamState

MAGIC = b"HYGN"
VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_step: int = 0
    step: int = 0
    version: int = VERSION

    @classmethod
    def capture(cls, model: HyGnn, adam: AdamState, config: TrainConfig, step: int) -> "Checkpoint":
        return cls(
            config=config,
            params={name: p.data.copy() for name, p in model.named_parameters()},
            adam_m={k: v.copy() for k, v in adam.m.items()},
            adam_v={k: v.copy() for k, v in adam.v.items()},
            adam_step=adam.step,
            step=step,
        )

    def build_model(self) -> HyGnn:
        model = HyGnn(self.config.dfl_config(), self.config.graph_config(), seed=self.config.seed)
        model.load_arrays(self.params)
        return model

    def adam_state(self) -> AdamState:
        c = self.config
        return AdamState(
            lr=c.lr,
            beta1=c.beta1,
            beta2=c.beta2,
            epsilon=c.epsilon,
            weight_decay=c.weight_decay,
            step=self.adam_step,
            m={k: v.copy() for k, v in self.adam_m.items()},
            v={k: v.copy() for k, v in self.adam_v.items()},
        )


# ---------------------------------------------------------------------------
# Config <-> numeric records
# ---------------------------------------------------------------------------


def _config_records(config: TrainConfig) -> dict[str, np.ndarray]:
    out = {}
    for key, value in config.to_dict().items():
        if key == "reduction":
            value = REDUCTIONS.index(value)
        out[f"config/{key}"] = np.asarray(
            [float(v) for v in value] if isinstance(value, list) else float(value), dtype=np.float64
        )
    return out


def _config_from_records(records: dict[str, np.ndarray]) -> TrainConfig:
    defaults = TrainConfig().to_dict()
    values = {}
    for key, default in defaults.items():
        rec = records.get(f"config/{key}")
        if rec is None:
            raise CheckpointError(f"checkpoint lacks config/{key}")
        if key == "reduction":
            values[key] = REDUCTIONS[int(rec)]
        elif isinstance(default, list) or key == "scales":
            values[key] = [int(v) for v in rec.reshape(-1)]
        elif isinstance(default, bool):
            values[key] = bool(rec)
        elif isinstance(default, int):
            values[key] = int(rec)
        elif isinstance(default, Fraction):
            values[key] = Fraction(float(rec)).limit_denominator(1 << 16)
        else:
            values[key] = float(rec)
    return TrainConfig(**values)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _write_record(fh: BinaryIO, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype="<f8")
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    if arr.ndim:
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def _read_records(fh: BinaryIO) -> dict[str, np.ndarray]:
    records = {}
    while True:
        head = fh.read(4)
        if not head:
            return records
        if len(head) != 4:
            raise CheckpointError("truncated checkpoint")
        (name_len,) = struct.unpack("<I", head)
        name = _read_exact(fh, name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(fh, 4))
        dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        values = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").astype(np.float64)
        records[name] = values.reshape(dims)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        for name, arr in ckpt.params.items():
            _write_record(fh, f"param/{name}", arr)
        for name, arr in ckpt.adam_m.items():
            _write_record(fh, f"adam/m/{name}", arr)
        for name, arr in ckpt.adam_v.items():
            _write_record(fh, f"adam/v/{name}", arr)
        _write_record(fh, "adam/step", np.asarray(float(ckpt.adam_step)))
        _write_record(fh, "state/step", np.asarray(float(ckpt.step)))
        for name, arr in _config_records(ckpt.config).items():
            _write_record(fh, name, arr)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        records = _read_records(fh)

    def section(prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in records.items() if k.startswith(prefix)}

    try:
        adam_step = int(records["adam/step"])
        step = int(records["state/step"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing record {exc}") from None
    return Checkpoint(
        config=_config_from_records(records),
        params=section("param/"),
        adam_m=section("adam/m/"),
        adam_v=section("adam/v/"),
        adam_step=adam_step,
        step=step,
        version=version,
    )
