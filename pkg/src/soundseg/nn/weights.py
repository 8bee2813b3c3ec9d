"""Binary weights file ("SSWT").

Layout, little-endian::

    magic "SSWT" | u32 version
    u32 depth | u32 base_filters | u32 kernel | u32 pool | u32 H | u32 W | u32 C
    u32 json length | experiment config as UTF-8 JSON (may be empty)
    u32 tensor count
    per tensor: u16 name length | name | u8 rank | u32 dims[rank] | f32 data | u32 crc32(data)
"""

import json
import struct
import zlib

import numpy as np

from soundseg.errors import FormatError
from soundseg.nn.unet import UNetConfig, param_shapes

__all__ = ["save_weights", "load_weights", "weights_to_bytes", "weights_from_bytes"]

MAGIC = b"SSWT"
VERSION = 1


def weights_to_bytes(params, config, experiment=None):
    shapes = param_shapes(config)
    if list(params) != list(shapes):
        raise ValueError("parameter names do not match the config's layout")
    meta = b"" if experiment is None else json.dumps(experiment, sort_keys=True).encode()
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<7I", config.depth, config.base_filters, config.kernel_size, config.pool_size, *config.input_shape),
        struct.pack("<I", len(meta)),
        meta,
        struct.pack("<I", len(params)),
    ]
    for name, value in params.items():
        if value.shape != shapes[name]:
            raise ValueError(f"{name}: shape {value.shape} != expected {shapes[name]}")
        raw = np.ascontiguousarray(value, dtype="<f4").tobytes()
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(raw)
        parts.append(struct.pack("<I", zlib.crc32(raw)))
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated weights file reading {what}: need {n} bytes, "
                f"{len(self.data) - self.pos} left",
                self.pos,
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def weights_from_bytes(data, expected_config=None):
    """Decode weights; returns ``(params, config, experiment_dict_or_None)``."""
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a weights file (bad magic)", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported weights version {version}", 4)
    depth, base, kernel, pool, h, w, c = r.unpack("<7I", "config")
    try:
        config = UNetConfig(depth, base, kernel, pool, (h, w, c))
    except ValueError as exc:
        raise FormatError(f"invalid stored config: {exc}", 8) from exc
    if expected_config is not None and config != expected_config:
        raise FormatError(
            f"config mismatch: file has depth={config.depth}, base_filters={config.base_filters}, "
            f"input {config.input_shape}; expected depth={expected_config.depth}, "
            f"base_filters={expected_config.base_filters}, input {expected_config.input_shape}",
            8,
        )
    (meta_len,) = r.unpack("<I", "config JSON length")
    meta = r.take(meta_len, "config JSON")
    experiment = json.loads(meta) if meta else None
    (count,) = r.unpack("<I", "tensor count")
    shapes = param_shapes(config)
    if count != len(shapes):
        raise FormatError(f"file holds {count} tensors, config needs {len(shapes)}", r.pos - 4)
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode(errors="replace")
        if name not in shapes:
            raise FormatError(f"unexpected tensor {name!r}", r.pos - name_len)
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        if tuple(dims) != shapes[name]:
            raise FormatError(
                f"tensor {name}: stored shape {tuple(dims)} != expected {shapes[name]}", r.pos
            )
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        raw = r.take(nbytes, f"data of tensor {name}")
        (crc,) = r.unpack("<I", f"checksum of {name}")
        if zlib.crc32(raw) != crc:
            raise FormatError(f"tensor {name}: checksum mismatch, data corrupted", r.pos - 4 - nbytes)
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last tensor", r.pos)
    return {name: params[name] for name in shapes}, config, experiment


def save_weights(params, path, config, experiment=None):
    with open(path, "wb") as f:
        f.write(weights_to_bytes(params, config, experiment))


def load_weights(path, expected_config=None):
    with open(path, "rb") as f:
        return weights_from_bytes(f.read(), expected_config)
