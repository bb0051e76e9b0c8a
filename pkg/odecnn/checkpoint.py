#  MIT License
#
#  Copyright (c) 2021 ben
#
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to deal
#  in the Software without restriction, including without limitation the rights
#  to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
#  copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#
#  The above copyright notice and this permission notice shall be included in all
#  copies or substantial portions of the Software.
#
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
#  OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
#  SOFTWARE.
"""
The binary checkpoint format.

Little-endian throughout::

    b"ODEC" | u32 version | 32-byte sha256 of the config text | u32 length + config text (utf-8)
    u32 next epoch | u64 optimizer step | f64 best validation Abs Rel
    PCG64 state: 16-byte state | 16-byte increment | u32 has_uint32 | u32 uinteger
    four tensor sections (parameters, Adam first moments, Adam second moments, buffers), each
        u32 count, then per tensor: u16 name length + name | u8 ndim | u32 dims... | float32 payload
"""
from __future__ import annotations
import logging
import os
import pathlib
import struct
import typing as t

import numpy as np

from odecnn.errors import DataError, FormatError
from odecnn.network import NetworkConfig, OdeNet
from odecnn.utils import stable_digest

__all__: list[str] = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "CheckpointState",
    "capture_state",
    "save_checkpoint",
    "read_checkpoint",
    "restore_network",
    "load_network",
]

_LOGGER = logging.getLogger("odecnn.checkpoint")

CHECKPOINT_MAGIC: t.Final[bytes] = b"ODEC"
CHECKPOINT_VERSION: t.Final[int] = 1
_SECTIONS: t.Final[tuple[str, ...]] = ("parameters", "adam_m", "adam_v", "buffers")


class CheckpointState(t.NamedTuple):
    config_text: str
    epoch: int
    step: int
    best_abs_rel: float
    rng_state: dict[str, t.Any]
    parameters: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]

    @property
    def network_config(self) -> NetworkConfig:
        return NetworkConfig.from_text(self.config_text)


def capture_state(
    net: OdeNet,
    *,
    config_text: str,
    epoch: int = 0,
    step: int = 0,
    best_abs_rel: float = float("inf"),
    rng: t.Optional[np.random.Generator] = None,
) -> CheckpointState:
    """Snapshot a network and its optimizer moments."""
    params = net.named_parameters()
    rng_state = rng.bit_generator.state if rng is not None else np.random.PCG64(0).state
    return CheckpointState(
        config_text,
        epoch,
        step,
        best_abs_rel,
        rng_state,
        {name: p.data.copy() for name, p in params.items()},
        {name: p.adam_m.copy() for name, p in params.items()},
        {name: p.adam_v.copy() for name, p in params.items()},
        {name: b.copy() for name, b in net.buffers().items()},
    )


def _pack_tensors(tensors: t.Mapping[str, np.ndarray]) -> bytes:
    chunks = [struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(chunks)


def _encode(state: CheckpointState) -> bytes:
    text = state.config_text.encode("utf-8")
    rng = state.rng_state
    if rng.get("bit_generator") != "PCG64":
        raise DataError("<checkpoint>", f"unsupported bit generator {rng.get('bit_generator')!r}")
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        stable_digest(state.config_text),
        struct.pack("<I", len(text)) + text,
        struct.pack("<IQd", state.epoch, state.step, state.best_abs_rel),
        int(rng["state"]["state"]).to_bytes(16, "little"),
        int(rng["state"]["inc"]).to_bytes(16, "little"),
        struct.pack("<II", int(rng["has_uint32"]), int(rng["uinteger"])),
    ]
    for section in _SECTIONS:
        chunks.append(_pack_tensors(getattr(state, section)))
    return b"".join(chunks)


def save_checkpoint(path: t.Union[str, pathlib.Path], state: CheckpointState) -> pathlib.Path:
    """Write a checkpoint atomically, through a temporary file in the same directory."""
    path = pathlib.Path(path)
    payload = _encode(state)
    temporary = path.with_name(path.name + ".tmp")
    try:
        temporary.write_bytes(payload)
        os.replace(temporary, path)
    except OSError as ex:
        raise DataError(path, f"cannot write checkpoint: {ex.strerror or ex}") from ex
    _LOGGER.debug(f"Wrote {len(payload)} byte checkpoint to {path}.")
    return path


class _Reader:
    __slots__ = ("data", "offset", "path")

    def __init__(self, data: bytes, path: pathlib.Path) -> None:
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(
                self.path,
                self.offset,
                f"truncated {what}, expected {size} bytes but found {len(self.data) - self.offset}",
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple[t.Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def tensors(self, section: str) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I", f"{section} count")
        found: dict[str, np.ndarray] = {}
        for _ in range(count):
            (length,) = self.unpack("<H", "tensor name length")
            start = self.offset
            name = self.take(length, "tensor name").decode("utf-8")
            if name in found:
                raise FormatError(self.path, start, f"tensor {name!r} appears twice in {section}")
            (ndim,) = self.unpack("<B", f"rank of {name}")
            dims = self.unpack(f"<{ndim}I", f"dimensions of {name}")
            size = int(np.prod(dims, dtype=np.int64)) * 4
            payload = self.take(size, f"payload of {name}")
            found[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        return found


def read_checkpoint(path: t.Union[str, pathlib.Path]) -> CheckpointState:
    """
    Raises
    ------
    :obj:`~.errors.FormatError`
        On a bad magic, an unknown version, a config digest mismatch or truncation.
    :obj:`~.errors.DataError`
        If the file cannot be read.
    """
    path = pathlib.Path(path)
    try:
        data = path.read_bytes()
    except OSError as ex:
        raise DataError(path, f"cannot read checkpoint: {ex.strerror or ex}") from ex
    reader = _Reader(data, path)
    if reader.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError(path, 0, f"bad magic, expected {CHECKPOINT_MAGIC!r}")
    (version,) = reader.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(path, 4, f"unsupported version {version}, expected {CHECKPOINT_VERSION}")
    digest = reader.take(32, "config digest")
    (length,) = reader.unpack("<I", "config length")
    text_offset = reader.offset
    config_text = reader.take(length, "config text").decode("utf-8")
    if stable_digest(config_text) != digest:
        raise FormatError(path, text_offset, "config text does not match its digest")
    epoch, step, best = reader.unpack("<IQd", "training counters")
    rng_state = int.from_bytes(reader.take(16, "generator state"), "little")
    rng_inc = int.from_bytes(reader.take(16, "generator increment"), "little")
    has_uint32, uinteger = reader.unpack("<II", "generator buffer")
    sections = [reader.tensors(section) for section in _SECTIONS]
    if reader.offset != len(data):
        raise FormatError(path, reader.offset, f"{len(data) - reader.offset} unexpected trailing bytes")
    return CheckpointState(
        config_text,
        epoch,
        step,
        best,
        {
            "bit_generator": "PCG64",
            "state": {"state": rng_state, "inc": rng_inc},
            "has_uint32": has_uint32,
            "uinteger": uinteger,
        },
        *sections,
    )


def restore_network(net: OdeNet, state: CheckpointState, path: t.Union[str, pathlib.Path] = "<checkpoint>") -> OdeNet:
    """Copy parameters, moments and buffers into a network built from the same configuration."""
    params = net.named_parameters()
    buffers = net.buffers()
    if set(params) != set(state.parameters) or set(buffers) != set(state.buffers):
        missing = sorted((set(params) | set(buffers)) ^ (set(state.parameters) | set(state.buffers)))
        raise FormatError(path, 0, f"tensor names do not match the network: {', '.join(missing[:5])}")
    for name, param in params.items():
        param.value = state.parameters[name]
        param.adam_m[...] = state.adam_m[name]
        param.adam_v[...] = state.adam_v[name]
    for name, buffer in buffers.items():
        buffer[...] = state.buffers[name]
    return net


def load_network(path: t.Union[str, pathlib.Path]) -> tuple[OdeNet, CheckpointState]:
    """Rebuild a network from a checkpoint alone."""
    state = read_checkpoint(path)
    net = OdeNet(state.network_config, seed=None)
    restore_network(net, state, path)
    _LOGGER.info(f"Loaded {net.config.sftl.value}/{net.config.cspn_name} network from {path} (epoch {state.epoch}).")
    return net, state
