"""Versioned named-tensor checkpoints.

Layout (all integers little-endian)::

    DEPTHFORMER-CKPT <version>\\n
    manifest <n_bytes>\\n
    <manifest: "key = value" lines, then one "tensor <name> <shape>" line per tensor>
    per tensor, in manifest order:
        u32 name length | name (utf-8) | u64 payload bytes | float64 LE payload
    END\\n
"""
from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import apply_overrides, dump_config, parse_pairs

MAGIC = b"DEPTHFORMER-CKPT"
VERSION = 1
END = b"END\n"


class CheckpointError(ValueError):
    pass


class VersionMismatch(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class SchemaMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict[str, str] = field(default_factory=dict)
    iteration: int = 0
    version: int = VERSION

    def train_config(self):
        from .train import TrainConfig

        return apply_overrides(TrainConfig(), self.config)


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def encode(ckpt: Checkpoint) -> bytes:
    manifest = [f"iteration = {ckpt.iteration}\n"]
    manifest += [f"config.{k} = {v}\n" for k, v in ckpt.config.items()]
    manifest += [f"tensor {name} {_shape_str(a.shape)}\n" for name, a in ckpt.tensors.items()]
    mbytes = "".join(manifest).encode()
    parts = [MAGIC + f" {ckpt.version}\n".encode(), f"manifest {len(mbytes)}\n".encode(), mbytes]
    for name, a in ckpt.tensors.items():
        nb = name.encode()
        payload = np.ascontiguousarray(a, dtype="<f8").tobytes()
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<Q", len(payload)), payload]
    parts.append(END)
    return b"".join(parts)


def decode(blob: bytes) -> Checkpoint:
    pos = 0

    def line() -> str:
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise TruncatedCheckpoint("header ends early")
        text = blob[pos:end].decode()
        pos = end + 1
        return text

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedCheckpoint(f"needed {n} bytes at offset {pos}, file has {len(blob) - pos} left")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    head = line().split()
    if len(head) != 2 or head[0].encode() != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if int(head[1]) != VERSION:
        raise VersionMismatch(f"checkpoint version {head[1]}, this reader supports {VERSION}")
    key, n = line().split()
    if key != "manifest":
        raise CheckpointError("missing manifest header")
    manifest = take(int(n)).decode().splitlines()
    specs = []
    meta = []
    for entry in manifest:
        if entry.startswith("tensor "):
            _, name, shape = entry.split(" ")
            specs.append((name, () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))))
        else:
            meta.append(entry)
    pairs = parse_pairs(meta)
    iteration = int(pairs.pop("iteration", 0))
    config = {k[len("config."):]: v for k, v in pairs.items() if k.startswith("config.")}
    tensors = {}
    for name, shape in specs:
        (ln,) = struct.unpack("<I", take(4))
        got = take(ln).decode()
        if got != name:
            raise SchemaMismatch(f"tensor record {got!r} where manifest lists {name!r}")
        (nbytes,) = struct.unpack("<Q", take(8))
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)):
            raise SchemaMismatch(f"tensor {name!r}: {nbytes} bytes do not match shape {shape}")
        tensors[name] = np.frombuffer(take(nbytes), dtype="<f8").astype(np.float64).reshape(shape)
    if take(len(END)) != END:
        raise TruncatedCheckpoint("missing end marker")
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after end marker")
    return Checkpoint(tensors, config, iteration, VERSION)


def save_checkpoint(path, model, train_cfg=None, iteration: int = 0) -> Checkpoint:
    config = parse_pairs(dump_config(train_cfg).splitlines()) if train_cfg is not None else {}
    ckpt = Checkpoint(model.state_dict(), config, iteration)
    Path(path).write_bytes(encode(ckpt))
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def build_model(ckpt: Checkpoint):
    """Instantiate the model described by the checkpoint's config and load its tensors."""
    from ..model import DepthFormer

    cfg = ckpt.train_config()
    model = DepthFormer(cfg.model_config(), seed=cfg.seed)
    own = dict(model.named_parameters())
    unknown = [n for n in ckpt.tensors if n not in own]
    missing = [n for n in own if n not in ckpt.tensors]
    if unknown or missing:
        raise SchemaMismatch(f"checkpoint tensors do not match model: unknown={unknown} missing={missing}")
    bad = [f"{n} {ckpt.tensors[n].shape} != {p.shape}" for n, p in own.items() if ckpt.tensors[n].shape != p.shape]
    if bad:
        raise SchemaMismatch("incompatible tensor dims: " + "; ".join(bad))
    model.load_state_dict(ckpt.tensors)
    return model


def write_loss_curve(path, curve) -> None:
    rows = ["iter,lr,loss\n"] + [f"{it},{lr!r},{loss!r}\n" for it, lr, loss in curve]
    Path(path).write_text("".join(rows))


def read_loss_curve(path) -> list[tuple[int, float, float]]:
    lines = Path(path).read_text().splitlines()[1:]
    return [(int(a), float(b), float(c)) for a, b, c in (ln.split(",") for ln in lines)]


def with_config(ckpt: Checkpoint, **changes) -> Checkpoint:
    return dataclasses.replace(ckpt, **changes)
