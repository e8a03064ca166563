"""Binary model checkpoints.

Byte layout (all integers little-endian):

    offset  size  content
    0       4     magic  b"MFPC"
    4       4     u32    format version (currently 1)
    8       8     u64    header length H
    16      H     header, UTF-8 JSON
    16+H    ...   parameter arrays, each: u64 element count + f64 elements

The header records the model name, the layer specs with their sizes per
network group, the RNG seed the model was created from, and whether
optimizer-state arrays follow the parameter arrays.  Arrays appear in
declaration order (group by group, layer by layer, weights before
biases); when optimizer state is present, the accumulator arrays repeat
the same sequence.  Float64 bytes round-trip exactly, so save -> load ->
forward is bit-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from manifoldplan.nn.layers import LayerSpec
from manifoldplan.nn.models import Discriminator, Generator, param_count

MAGIC = b"MFPC"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    model: str
    groups: List[Tuple[str, List[LayerSpec]]]
    params: np.ndarray  # flat, all groups concatenated
    rng_seed: int
    accum: Optional[np.ndarray] = None  # Adagrad history, same length as params


def _array_shapes(groups) -> List[Tuple[int, ...]]:
    shapes = []
    for _, specs in groups:
        for spec in specs:
            shapes.extend(spec.param_shapes())
    return shapes


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "model": ckpt.model,
        "groups": [[name, [s.to_dict() for s in specs]] for name, specs in ckpt.groups],
        "rng_seed": ckpt.rng_seed,
        "optimizer_state": ckpt.accum is not None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for flat in (ckpt.params,) if ckpt.accum is None else (ckpt.params, ckpt.accum):
            pos = 0
            for shape in _array_shapes(ckpt.groups):
                n = int(np.prod(shape))
                arr = np.ascontiguousarray(flat[pos : pos + n], dtype="<f8")
                f.write(struct.pack("<Q", n))
                f.write(arr.tobytes())
                pos += n
            if pos != len(flat):
                raise CheckpointError("flat parameter vector does not match layer shapes")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        groups = [
            (name, [LayerSpec.from_dict(d) for d in spec_dicts])
            for name, spec_dicts in header["groups"]
        ]
        shapes = _array_shapes(groups)
        total = sum(int(np.prod(s)) for s in shapes)

        def read_flat():
            flat = np.empty(total)
            pos = 0
            for shape in shapes:
                n = int(np.prod(shape))
                (count,) = struct.unpack("<Q", f.read(8))
                if count != n:
                    raise CheckpointError("array length does not match layer spec")
                flat[pos : pos + n] = np.frombuffer(f.read(8 * n), dtype="<f8")
                pos += n
            return flat

        params = read_flat()
        accum = read_flat() if header["optimizer_state"] else None
    return Checkpoint(header["model"], groups, params, header["rng_seed"], accum)


def save_generator(path, gen: Generator, accum: Optional[np.ndarray] = None) -> None:
    groups = [("encoder", gen.encoder.specs), ("trunk", gen.trunk.specs)]
    save_checkpoint(path, Checkpoint("generator", groups, gen.params, gen.seed, accum))


def load_generator(path) -> Tuple[Generator, Optional[np.ndarray]]:
    ckpt = load_checkpoint(path)
    if ckpt.model != "generator":
        raise CheckpointError(f"expected a generator checkpoint, found {ckpt.model!r}")
    trunk_specs = dict(ckpt.groups)["trunk"]
    n = trunk_specs[-1].out_features
    gen = Generator(n=n, params=ckpt.params, seed=ckpt.rng_seed)
    return gen, ckpt.accum


def save_discriminator(path, disc: Discriminator, accum: Optional[np.ndarray] = None) -> None:
    groups = [("net", disc.net.specs)]
    save_checkpoint(path, Checkpoint("discriminator", groups, disc.params, disc.seed, accum))


def load_discriminator(path) -> Tuple[Discriminator, Optional[np.ndarray]]:
    ckpt = load_checkpoint(path)
    if ckpt.model != "discriminator":
        raise CheckpointError(f"expected a discriminator checkpoint, found {ckpt.model!r}")
    specs = dict(ckpt.groups)["net"]
    n = specs[0].in_features - 128
    disc = Discriminator(n=n, params=ckpt.params, seed=ckpt.rng_seed)
    return disc, ckpt.accum
