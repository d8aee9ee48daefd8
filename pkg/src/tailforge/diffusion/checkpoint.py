"""Binary checkpoints for the denoiser (and a reusable tensor container).

Layout (little-endian): magic ``DDPM`` | u16 version | u32 T | f64 betas[T] |
u32 input_width | u8 n_cond | u32 cond_widths... | u32 hidden | u32 depth |
u32 attn_width | u32 time_width | tensor block | u8 has_optimizer
[| u64 adam_step | tensor block].  A tensor block is u32 count followed by
(u16 name_len, name utf-8, u8 ndim, u32 dims..., float32 data) per tensor.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..optim import Adam
from .network import DenoiserConfig, DenoiserNetwork
from .schedule import NoiseSchedule

MAGIC = b"DDPM"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable or internally inconsistent checkpoint file."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint dimensions differ from what the caller requires."""


def write_tensor_block(fh, tensors: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        arr = np.asarray(arr)
        fh.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated (wanted {n} bytes at {self.pos})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_tensor_block(reader: _Reader) -> dict[str, np.ndarray]:
    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = tuple(reader.unpack("<" + "I" * ndim)) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float64)
    return tensors


def save_diffusion(
    path: str | Path,
    net: DenoiserNetwork,
    schedule: NoiseSchedule,
    optimizer: Adam | None = None,
) -> None:
    c = net.config
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", schedule.num_steps))
        fh.write(np.ascontiguousarray(schedule.betas, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", c.input_width))
        fh.write(struct.pack("<B", len(c.cond_widths)))
        for w in c.cond_widths:
            fh.write(struct.pack("<I", w))
        fh.write(struct.pack("<IIII", c.hidden, c.depth, c.attn_width, c.time_width))
        write_tensor_block(fh, net.params)
        if optimizer is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", optimizer.step_count))
            write_tensor_block(fh, optimizer.state_tensors())


def load_diffusion(
    path: str | Path,
    expect_input_width: int | None = None,
    expect_cond_widths: tuple[int, ...] | None = None,
) -> tuple[DenoiserNetwork, NoiseSchedule]:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = reader.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (num_steps,) = reader.unpack("<I")
    betas = np.frombuffer(reader.take(8 * num_steps), dtype="<f8").copy()
    (input_width,) = reader.unpack("<I")
    (n_cond,) = reader.unpack("<B")
    cond_widths = tuple(reader.unpack("<" + "I" * n_cond))
    hidden, depth, attn_width, time_width = reader.unpack("<IIII")
    if expect_input_width is not None and input_width != expect_input_width:
        raise CheckpointMismatchError(
            f"{path}: checkpoint input width {input_width}, caller requires {expect_input_width}"
        )
    if expect_cond_widths is not None and cond_widths != tuple(expect_cond_widths):
        raise CheckpointMismatchError(
            f"{path}: checkpoint condition widths {cond_widths}, "
            f"caller requires {tuple(expect_cond_widths)}"
        )
    config = DenoiserConfig(
        input_width=input_width,
        cond_widths=cond_widths,
        hidden=hidden,
        depth=depth,
        attn_width=attn_width,
        time_width=time_width,
    )
    net = DenoiserNetwork(config, rng_seed=0)
    tensors = read_tensor_block(reader)
    if set(tensors) != set(net.params):
        missing = sorted(set(net.params) - set(tensors))
        raise CheckpointError(f"{path}: parameter names do not match config (missing {missing[:3]})")
    for name, arr in tensors.items():
        if arr.shape != net.params[name].shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {arr.shape}, expected {net.params[name].shape}"
            )
        net.params[name] = arr
    return net, NoiseSchedule(betas)
