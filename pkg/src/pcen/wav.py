"""RIFF/WAVE reading and writing for PCM16/PCM32 and IEEE float audio.

The stdlib ``wave`` module rejects float WAVs, so the container is parsed
by hand with ``struct``.
"""

from __future__ import annotations

import struct

import numpy as np

from .dsp import AudioBuffer
from .errors import DecodeError, UnsupportedFormatError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

_DTYPES = {
    (WAVE_FORMAT_PCM, 16): np.dtype("<i2"),
    (WAVE_FORMAT_PCM, 32): np.dtype("<i4"),
    (WAVE_FORMAT_IEEE_FLOAT, 32): np.dtype("<f4"),
    (WAVE_FORMAT_IEEE_FLOAT, 64): np.dtype("<f8"),
}


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4].decode("latin-1")
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise DecodeError(chunk_id, f"declares {size} bytes but only {len(body)} remain")
        yield chunk_id, body
        pos += 8 + size + (size & 1)


def decode_wav(data: bytes) -> AudioBuffer:
    """Decode a WAV byte string to a mono float64 buffer.

    Channels are averaged. Integer PCM is divided by ``2**(bits-1)`` so that
    the most negative code maps to exactly -1.0.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("RIFF", "missing RIFF/WAVE header")

    fmt = None
    samples_raw = None
    for chunk_id, body in _iter_chunks(data):
        if chunk_id == "fmt ":
            fmt = body
        elif chunk_id == "data":
            samples_raw = body
            break
    if fmt is None:
        raise DecodeError("fmt ", "chunk not found before data")
    if len(fmt) < 16:
        raise DecodeError("fmt ", f"chunk is {len(fmt)} bytes, need at least 16")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise DecodeError("fmt ", "extensible format without sub-format GUID")
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if samples_raw is None:
        raise DecodeError("data", "chunk not found")
    if channels < 1 or rate < 1:
        raise DecodeError("fmt ", f"invalid channel count {channels} or rate {rate}")

    dtype = _DTYPES.get((tag, bits))
    if dtype is None:
        raise UnsupportedFormatError(f"unsupported WAV codec: format tag {tag:#06x}, {bits} bits")
    if block_align != channels * dtype.itemsize:
        raise DecodeError("fmt ", f"block align {block_align} inconsistent with {channels}x{bits} bits")
    if len(samples_raw) % block_align:
        raise DecodeError("data", f"{len(samples_raw)} bytes is not a whole number of frames")

    frames = np.frombuffer(samples_raw, dtype=dtype).reshape(-1, channels).astype(np.float64)
    if dtype.kind == "i":
        frames /= float(2 ** (bits - 1))
    return AudioBuffer(frames.mean(axis=1), rate)


def encode_wav(audio: AudioBuffer, sample_format: str = "float32") -> bytes:
    """Serialize a mono buffer as a canonical 44-byte-header WAV.

    ``sample_format`` is ``"pcm16"`` (clipped, rounded) or ``"float32"``.
    """
    if sample_format == "pcm16":
        tag, bits = WAVE_FORMAT_PCM, 16
        codes = np.clip(np.round(audio.samples * 32768.0), -32768, 32767)
        payload = codes.astype("<i2").tobytes()
    elif sample_format == "float32":
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        payload = audio.samples.astype("<f4").tobytes()
    else:
        raise UnsupportedFormatError(f"cannot encode sample format {sample_format!r}")
    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, 1, audio.sample_rate, audio.sample_rate * block, block, bits,
        b"data", len(payload),
    )
    return header + payload


def read_wav(path) -> AudioBuffer:
    with open(path, "rb") as fh:
        return decode_wav(fh.read())


def write_wav(path, audio: AudioBuffer, sample_format: str = "float32") -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav(audio, sample_format))
