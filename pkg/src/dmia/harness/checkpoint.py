"""Binary checkpoint format.

Layout (little-endian):

    magic    "DMIA"
    version  u32 (currently 1)
    model    len-prefixed tag, e.g. "ddim/small_unet" or "gan/dcgan"
    shape    u8 rank + u32 dims (the data shape the model operates on)
    latent   u32 latent dim (0 for denoisers)
    schedule len-prefixed kind + u32 T (betas are recomputed, never stored)
    epochs   u32 epochs completed
    confhash len-prefixed config hash
    params   u32 count, then per tensor: len-prefixed name, u8 rank,
             u32 dims, raw float32 payload

Reload rebuilds the exact parameter bytes, so forward passes match
bit-for-bit. Unknown versions are rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..models import DenoiserNet, GanPair
from ..numerics import Tensor
from ..schedules import NoiseSchedule, make_schedule

MAGIC = b"DMIA"
VERSION = 1


@dataclass(frozen=True)
class CheckpointMeta:
    model_kind: str
    data_shape: tuple[int, ...]
    latent_dim: int
    schedule_kind: str
    T: int
    epochs: int
    config_hash: str


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated checkpoint at byte {self.pos}", offset=self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        (n,) = struct.unpack("<H", self.take(2))
        return self.take(n).decode("utf-8")


def save_checkpoint(path: str | Path, model, schedule: NoiseSchedule, epochs: int, config_hash: str) -> None:
    if isinstance(model, DenoiserNet):
        tag, shape, latent = f"ddim/{model.arch}", model.input_shape, 0
    elif isinstance(model, GanPair):
        tag, shape, latent = f"gan/{model.arch}", model.data_shape, model.latent_dim
    else:
        raise FormatError(f"cannot checkpoint object of type {type(model).__name__}")
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(tag)]
    parts.append(struct.pack("<B", len(shape)) + b"".join(struct.pack("<I", d) for d in shape))
    parts.append(struct.pack("<I", latent))
    parts.append(_pack_str(schedule.kind) + struct.pack("<I", schedule.T))
    parts.append(struct.pack("<I", epochs))
    parts.append(_pack_str(config_hash))
    params = model.parameters()
    parts.append(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<B", arr.ndim) + b"".join(struct.pack("<I", d) for d in arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path):
    """Returns (model, schedule, meta)."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a DMIA checkpoint", offset=0)
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    tag = r.string()
    rank = r.u8()
    shape = tuple(r.u32() for _ in range(rank))
    latent = r.u32()
    sched_kind = r.string()
    T = r.u32()
    epochs = r.u32()
    conf_hash = r.string()
    n_params = r.u32()
    params: dict[str, Tensor] = {}
    for _ in range(n_params):
        name = r.string()
        prank = r.u8()
        pshape = tuple(r.u32() for _ in range(prank))
        count = int(np.prod(pshape)) if pshape else 1
        raw = r.take(count * 4)
        params[name] = Tensor(np.frombuffer(raw, dtype="<f4").reshape(pshape).copy(), requires_grad=True)
    if r.pos != len(r.blob):
        raise FormatError(f"{path}: {len(r.blob) - r.pos} trailing bytes", offset=r.pos)

    family, _, arch = tag.partition("/")
    if family == "ddim":
        model = DenoiserNet(arch, shape, params)
    elif family == "gan":
        model = GanPair(arch, shape, latent, params)
    else:
        raise FormatError(f"{path}: unknown model tag '{tag}'")
    schedule = make_schedule(sched_kind, T)
    meta = CheckpointMeta(tag, shape, latent, sched_kind, T, epochs, conf_hash)
    return model, schedule, meta
