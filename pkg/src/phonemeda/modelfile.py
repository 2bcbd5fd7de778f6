"""Binary model container.

Layout (little-endian)::

    b"YVXM" | u32 version | u32 tensor count
    per tensor: u16 name length | utf-8 name | u8 rank | u32 dims[rank] | f32 data
    u32 CRC-32 of every preceding byte

The model config travels as the first tensor, ``__config__``, holding the
integer fields of :class:`ModelConfig` as floats.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .autodiff import Tensor
from .errors import (
    BadMagic,
    BadModelFile,
    ChecksumMismatch,
    DimensionMismatch,
    InvalidConfig,
    TruncatedFile,
    UnsupportedVersion,
)
from .model import ModelConfig, check_params, is_buffer

MAGIC = b"YVXM"
VERSION = 1
CONFIG_NAME = "__config__"
MAX_RANK = 8


def _pack_tensor(name: str, data: np.ndarray) -> bytes:
    raw_name = name.encode("utf-8")
    arr = np.ascontiguousarray(data, dtype="<f4")
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def serialize(params: dict[str, Tensor], cfg: ModelConfig) -> bytes:
    check_params(params, cfg)
    body = [_pack_tensor(CONFIG_NAME, np.asarray(cfg.as_ints(), dtype=np.float32))]
    body += [_pack_tensor(name, t.data) for name, t in params.items()]
    payload = MAGIC + struct.pack("<II", VERSION, len(body)) + b"".join(body)
    return payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, only {self.end - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> tuple[dict[str, Tensor], ModelConfig]:
    if data[:len(MAGIC)] != MAGIC[:len(data)] or len(data) == 0:
        raise BadMagic(f"not a model file (magic {data[:4]!r})")
    if len(data) < len(MAGIC) + 12:
        raise TruncatedFile(f"file has only {len(data)} bytes")
    rd = _Reader(data, len(data) - 4)
    rd.take(len(MAGIC))
    version, count = rd.unpack("<II")
    if version != VERSION:
        raise UnsupportedVersion(f"model file version {version}, expected {VERSION}")
    tensors = {}
    for _ in range(count):
        (name_len,) = rd.unpack("<H")
        try:
            name = rd.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BadModelFile(f"tensor name is not UTF-8 at offset {rd.pos}") from exc
        (rank,) = rd.unpack("<B")
        if rank > MAX_RANK:
            raise BadModelFile(f"tensor {name!r} has rank {rank}")
        shape = rd.unpack(f"<{rank}I")
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(rd.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        tensors[name] = arr
    if rd.pos != rd.end:
        raise ChecksumMismatch(f"{rd.end - rd.pos} unexpected bytes before checksum")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if crc != zlib.crc32(data[:-4]):
        raise ChecksumMismatch("CRC-32 does not match payload")
    if CONFIG_NAME not in tensors:
        raise BadModelFile("model file carries no config tensor")
    try:
        cfg = ModelConfig.from_ints(tensors.pop(CONFIG_NAME).tolist()).validate()
        params = {k: Tensor(v, requires_grad=not is_buffer(k)) for k, v in tensors.items()}
        check_params(params, cfg)
    except (InvalidConfig, DimensionMismatch) as exc:
        raise BadModelFile(str(exc)) from exc
    return params, cfg


def save_model(path, params, cfg: ModelConfig) -> None:
    with open(path, "wb") as f:
        f.write(serialize(params, cfg))


def load_model(path):
    with open(path, "rb") as f:
        return deserialize(f.read())
