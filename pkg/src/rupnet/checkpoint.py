"""RUPN checkpoint format.

Little-endian layout::

    "RUPN" | u32 version | u32 config length | config JSON
    u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 dims | f32 data

Tensors follow the network layout order; BN running statistics are included
and carry the ``.running_mean`` / ``.running_var`` suffixes.
"""

import hashlib
import logging
import struct
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .errors import CorruptCheckpointError
from .model import Network, NetworkConfig, empty_network, network_layout

logger = logging.getLogger(__name__)

MAGIC = b"RUPN"
VERSION = 1


def encode_checkpoint(net: Network) -> bytes:
    config_json = net.config.model_dump_json().encode("utf-8")
    state = net.state()
    parts = [MAGIC, struct.pack("<II", VERSION, len(config_json)), config_json, struct.pack("<I", len(state))]
    for name, value in state:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(net: Network, path: str | Path):
    """Write parameters, running statistics and the inline config (always f32)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(net))
    logger.info(f"Saved checkpoint {path}")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise CorruptCheckpointError(f"truncated while reading {what}", self.offset)
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes) -> Network:
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise CorruptCheckpointError("bad magic, not a RUPN checkpoint", 0)
    (version,) = reader.unpack("<I", "version")
    if version != VERSION:
        raise CorruptCheckpointError(f"unsupported version {version}", 4)

    (config_len,) = reader.unpack("<I", "config length")
    config_at = reader.offset
    try:
        config = NetworkConfig.model_validate_json(reader.take(config_len, "config"))
    except ValidationError as e:
        raise CorruptCheckpointError(f"invalid embedded config: {e.error_count()} errors", config_at) from None

    net = empty_network(config)
    expected = network_layout(config)
    targets = dict(net.state())
    count_at = reader.offset
    (count,) = reader.unpack("<I", "tensor count")
    if count != len(expected):
        raise CorruptCheckpointError(f"expected {len(expected)} tensors for this config, header says {count}", count_at)

    for slot in expected:
        entry_at = reader.offset
        (name_len,) = reader.unpack("<H", "name length")
        name = reader.take(name_len, "tensor name").decode("utf-8", errors="replace")
        (rank,) = reader.unpack("<B", "rank")
        dims = reader.unpack(f"<{rank}I", f"dims of {name}")
        if name != slot.name or dims != slot.shape:
            raise CorruptCheckpointError(f"shape table mismatch: found {name} {dims}, expected {slot.name} {slot.shape}", entry_at)
        size = int(np.prod(dims)) * 4
        targets[name][...] = np.frombuffer(reader.take(size, f"data of {name}"), dtype="<f4").reshape(dims)

    if reader.offset != len(data):
        raise CorruptCheckpointError(f"{len(data) - reader.offset} trailing bytes", reader.offset)
    return net


def load_checkpoint(path: str | Path) -> Network:
    """Rebuild a network from a checkpoint, validating magic, version and shape table"""
    path = Path(path)
    net = decode_checkpoint(path.read_bytes())
    logger.info(f"Loaded checkpoint {path} ({net.param_count()} parameters)")
    return net


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
