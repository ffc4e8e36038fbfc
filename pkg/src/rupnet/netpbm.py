"""Binary netpbm (P5 grayscale / P6 RGB, maxval 255) reading and writing"""

import logging
from pathlib import Path

import numpy as np

from .errors import DecodeError, InvalidArgumentError
from .tensor import Tensor, get_dtype

logger = logging.getLogger(__name__)

_CHANNELS = {b"P5": 1, b"P6": 3}
_WHITESPACE = b" \t\n\r\v\f"


def _header_tokens(data: bytes, path: str) -> tuple[list[bytes], int]:
    """Magic, width, height, maxval and the offset of the first payload byte"""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos] in _WHITESPACE:
            pos += 1
        if pos < len(data) and data[pos] == ord("#"):
            end = data.find(b"\n", pos)
            if end < 0:
                raise DecodeError("unterminated header comment", path, pos)
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise DecodeError("truncated header", path, pos)
        tokens.append(data[start:pos])
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise DecodeError("header must end with a single whitespace byte", path, pos)
    return tokens, pos + 1


def decode(data: bytes, path: str = "") -> Tensor:
    """Decode netpbm bytes to a C x H x W tensor with values byte / 255"""
    tokens, offset = _header_tokens(data, path)
    magic = tokens[0]
    if magic not in _CHANNELS:
        raise DecodeError(f"unsupported magic {magic!r}, expected P5 or P6", path, 0)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DecodeError(f"non-numeric header field in {tokens[1:]}", path, 2) from None
    if width < 1 or height < 1:
        raise DecodeError(f"invalid dimensions {width}x{height}", path, 2)
    if maxval != 255:
        raise DecodeError(f"maxval must be 255, got {maxval}", path, 2)

    channels = _CHANNELS[magic]
    expected = width * height * channels
    payload = data[offset : offset + expected]
    if len(payload) < expected:
        raise DecodeError(f"payload truncated: expected {expected} bytes, found {len(payload)}", path, offset + len(payload))

    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return (pixels.transpose(2, 0, 1).astype(np.float64) / 255.0).astype(get_dtype())


def read_image(path: str | Path) -> Tensor:
    """Read a P5/P6 file; grayscale files yield one channel"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise DecodeError("file not found", str(path), 0) from None
    return decode(data, str(path))


def encode(t: Tensor) -> bytes:
    if t.ndim != 3 or t.shape[0] not in (1, 3):
        raise InvalidArgumentError(f"netpbm images need 1 or 3 channels (C x H x W), got shape {t.shape}")
    channels, height, width = t.shape
    pixels = np.round(np.clip(t, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    magic = "P5" if channels == 1 else "P6"
    return f"{magic}\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def write_image(t: Tensor, path: str | Path):
    """Write a 1-channel tensor as P5 or a 3-channel tensor as P6"""
    data = encode(t)
    path = Path(path)
    path.write_bytes(data)
    logger.debug(f"Wrote {path} ({t.shape[2]}x{t.shape[1]})")
