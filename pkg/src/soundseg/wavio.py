"""Minimal RIFF/WAVE reader and writer.

Reads 16-bit PCM and 32-bit float (plus 8/24/32-bit PCM and 64-bit float),
mono or multichannel, and writes 16-bit PCM. Decode failures raise
``FormatError`` carrying the byte offset where parsing stopped.
"""

import struct
from pathlib import Path

import numpy as np

from soundseg.dsp import Waveform, to_mono
from soundseg.errors import FormatError

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def _decode_pcm(raw, bits):
    if bits == 8:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        return v.astype(np.float64) / float(1 << 23)
    if bits == 32:
        return np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    raise ValueError(bits)


def read_wav_array(path):
    """Return ``(samples, sample_rate)`` with samples shaped (n, channels)."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: file too short for a RIFF header", len(data))
    if data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file", 0)

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + size > len(data):
            if chunk_id == b"data":
                # tolerate streams written with a bogus length
                size = len(data) - body
            else:
                raise FormatError(
                    f"{path}: chunk {chunk_id!r} claims {size} bytes, "
                    f"only {len(data) - body} remain",
                    pos,
                )
        if chunk_id == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too short ({size} bytes)", pos)
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag == _EXTENSIBLE:
                if size < 40:
                    raise FormatError(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE header", pos)
                (tag,) = struct.unpack_from("<H", data, body + 24)
            fmt = (tag, channels, rate, block_align, bits, pos)
        elif chunk_id == b"data":
            payload = (body, size)
        pos = body + size + (size & 1)

    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk", pos)
    if payload is None:
        raise FormatError(f"{path}: missing data chunk", pos)
    tag, channels, rate, block_align, bits, fmt_pos = fmt
    if channels < 1 or rate < 1:
        raise FormatError(f"{path}: invalid channel count {channels} or rate {rate}", fmt_pos)
    body, size = payload
    raw = data[body : body + size - size % block_align] if block_align else b""

    if tag == _PCM and bits in (8, 16, 24, 32):
        flat = _decode_pcm(raw, bits)
    elif tag == _FLOAT and bits == 32:
        flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    elif tag == _FLOAT and bits == 64:
        flat = np.frombuffer(raw, dtype="<f8").copy()
    else:
        raise FormatError(f"{path}: unsupported encoding (format tag {tag}, {bits} bits)", fmt_pos)
    if not np.all(np.isfinite(flat)):
        raise FormatError(f"{path}: non-finite float samples", body)
    return flat.reshape(-1, channels), rate


def read_wav(path):
    """Read a WAV file as a mono :class:`Waveform` (channels averaged)."""
    samples, rate = read_wav_array(path)
    return Waveform(to_mono(samples), rate)


def write_wav(path, w):
    """Write a mono waveform as 16-bit PCM, clipping to [-1, 1)."""
    samples = np.clip(np.asarray(w.samples, dtype=np.float64), -1.0, 32767 / 32768)
    pcm = np.round(samples * 32768.0).astype("<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(pcm),
        b"WAVE",
        b"fmt ",
        16,
        _PCM,
        1,
        w.sample_rate,
        w.sample_rate * 2,
        2,
        16,
        b"data",
        len(pcm),
    )
    Path(path).write_bytes(header + pcm)
