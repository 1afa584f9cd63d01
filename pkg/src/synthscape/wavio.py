"""Strict RIFF/WAVE codec.

Reads 16-bit PCM, 24-bit PCM and 32-bit IEEE float files (plain or
WAVE_FORMAT_EXTENSIBLE headers) and writes 16-bit PCM or 32-bit float.
Truncated or inconsistent files are rejected instead of being silently
padded or shortened.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import AudioFormatError

__all__ = ["decode_wav", "encode_wav", "read_wav", "write_wav", "ENCODINGS"]

_PCM = 0x0001
_FLOAT = 0x0003
_EXTENSIBLE = 0xFFFE

ENCODINGS = ("pcm16", "pcm24", "float32")
WRITE_ENCODINGS = ("pcm16", "float32")


def _encoding_name(tag: int, bits: int) -> str:
    if tag == _PCM:
        return f"pcm{bits}"
    if tag == _FLOAT:
        return f"float{bits}"
    return f"format_0x{tag:04x}/{bits}bit"


def _chunks(blob: bytes):
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        start = pos + 8
        yield cid, start, size
        pos = start + size + (size & 1)


def decode_wav(blob: bytes) -> tuple[np.ndarray, int]:
    """Decode a WAV byte string into ``(frames x channels float64, rate)``."""
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise AudioFormatError("not a RIFF/WAVE file")

    fmt = None
    data = None
    for cid, start, size in _chunks(blob):
        if cid == b"fmt ":
            if size < 16 or start + size > len(blob):
                raise AudioFormatError("truncated fmt chunk")
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", blob, start)
            if tag == _EXTENSIBLE:
                if size < 40:
                    raise AudioFormatError("truncated extensible fmt chunk")
                (tag,) = struct.unpack_from("<H", blob, start + 24)
            fmt = (tag, channels, rate, block_align, bits)
        elif cid == b"data":
            end = start + size
            if end > len(blob):
                raise AudioFormatError(
                    f"truncated file: data chunk declares {size} bytes, {len(blob) - start} present"
                )
            data = blob[start:end]
            break

    if fmt is None:
        raise AudioFormatError("missing fmt chunk")
    if data is None:
        raise AudioFormatError("truncated file: missing data chunk")

    tag, channels, rate, block_align, bits = fmt
    name = _encoding_name(tag, bits)
    if name not in ENCODINGS:
        raise AudioFormatError(f"unsupported encoding {name}")
    if channels < 1 or rate < 1:
        raise AudioFormatError(f"invalid header: channels={channels} rate={rate}")
    if block_align != channels * bits // 8:
        raise AudioFormatError(f"invalid block alignment {block_align}")
    if len(data) % block_align:
        raise AudioFormatError("truncated file: partial sample frame in data chunk")

    if name == "pcm16":
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif name == "pcm24":
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints.astype(np.float64) / float(1 << 23)
    else:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)

    return samples.reshape(-1, channels), int(rate)


def encode_wav(samples: np.ndarray, rate: int, encoding: str = "float32") -> bytes:
    """Encode mono samples in [-1, 1] to a WAV byte string."""
    if encoding not in WRITE_ENCODINGS:
        raise AudioFormatError(f"unsupported encoding {encoding}")
    x = np.asarray(samples, dtype=np.float64).reshape(-1)

    if encoding == "pcm16":
        ints = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
        fmt = struct.pack("<HHIIHH", _PCM, 1, rate, rate * 2, 2, 16)
        chunks = [(b"fmt ", fmt)]
    else:
        payload = x.astype("<f4").tobytes()
        fmt = struct.pack("<HHIIHHH", _FLOAT, 1, rate, rate * 4, 4, 32, 0)
        chunks = [(b"fmt ", fmt), (b"fact", struct.pack("<I", x.size))]
    chunks.append((b"data", payload))

    body = b"WAVE"
    for cid, content in chunks:
        body += cid + struct.pack("<I", len(content)) + content
        if len(content) & 1:
            body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise AudioFormatError(f"cannot read {path}: {exc}") from exc
    try:
        return decode_wav(blob)
    except AudioFormatError as exc:
        raise AudioFormatError(f"{path}: {exc}") from None


def write_wav(path: str | Path, samples: np.ndarray, rate: int, encoding: str = "float32") -> None:
    Path(path).write_bytes(encode_wav(samples, rate, encoding))
