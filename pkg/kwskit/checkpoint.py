"""
Binary checkpoint format ("S4KC").

    magic "S4KC" | version u32 | kind u32 (0 float32, 1 int8)
    input_dim u32 | num_layers u32 | hidden_dim u32 | embedding_dim u32
    tensor count u32
    per tensor: name length u32 | name utf-8 | rank u32 | dims u32 * rank |
                float32 data            (kind 0)
                float32 scale + int8 data (kind 1)
    kind 1 only: w_scale f32 | b_shift f32

All integers and floats are little endian.
"""

import logging
import os
import struct
from collections import OrderedDict
from typing import BinaryIO, Dict, Tuple

import numpy as np

from kwskit.errors import CheckpointFormatError
from kwskit.kws_model import ModelConfig, ModelParams
from kwskit.quantization import QuantizedModel, QuantizedTensor, dequantize

logger = logging.getLogger(__name__)

MAGIC = b"S4KC"
VERSION = 1
KIND_FLOAT32 = 0
KIND_INT8 = 1

_HEADER = struct.Struct("<4sII4II")
_U32 = struct.Struct("<I")
_F32 = struct.Struct("<f")


def _write_atomic(path: str, blob: bytes) -> int:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp{os.getpid()}"
    with open(tmp_path, "wb") as f:
        f.write(blob)
    os.replace(tmp_path, path)
    return len(blob)


def _tensor_prefix(name: str, shape: Tuple[int, ...]) -> bytes:
    encoded = name.encode("utf-8")
    parts = [_U32.pack(len(encoded)), encoded, _U32.pack(len(shape))]
    parts.extend(_U32.pack(d) for d in shape)
    return b"".join(parts)


def _header(kind: int, config: ModelConfig, count: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, kind, config.input_dim, config.num_layers,
                        config.hidden_dim, config.embedding_dim, count)


def save_checkpoint(params: ModelParams, path: str) -> int:
    """Write float32 parameters; returns the number of bytes written"""
    named = params.named_tensors()
    parts = [_header(KIND_FLOAT32, params.config, len(named))]
    for name, data in named.items():
        parts.append(_tensor_prefix(name, data.shape))
        parts.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    size = _write_atomic(path, b"".join(parts))
    logger.debug(f"Saved float checkpoint {path} ({size} bytes)")
    return size


def save_quantized(model: QuantizedModel, path: str) -> int:
    """Write an int8 model; returns the number of bytes written"""
    parts = [_header(KIND_INT8, model.config, len(model.tensors))]
    for name, q in model.tensors.items():
        parts.append(_tensor_prefix(name, q.shape))
        parts.append(_F32.pack(q.scale))
        parts.append(np.ascontiguousarray(q.values, dtype=np.int8).tobytes())
    parts.append(_F32.pack(model.head["w_scale"]))
    parts.append(_F32.pack(model.head["b_shift"]))
    size = _write_atomic(path, b"".join(parts))
    logger.debug(f"Saved int8 checkpoint {path} ({size} bytes)")
    return size


class _Reader:
    def __init__(self, f: BinaryIO, path: str):
        self.f = f
        self.path = path

    def take(self, n: int) -> bytes:
        blob = self.f.read(n)
        if len(blob) != n:
            raise CheckpointFormatError(f"{self.path}: truncated (wanted {n} bytes)")
        return blob

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def f32(self) -> float:
        return _F32.unpack(self.take(4))[0]

    def tensor_prefix(self) -> Tuple[str, Tuple[int, ...]]:
        name_len = self.u32()
        if name_len > 1024:
            raise CheckpointFormatError(f"{self.path}: implausible tensor name length {name_len}")
        name = self.take(name_len).decode("utf-8")
        rank = self.u32()
        if rank > 8:
            raise CheckpointFormatError(f"{self.path}: implausible rank {rank} for {name}")
        return name, tuple(self.u32() for _ in range(rank))


def _read(path: str):
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointFormatError(f"Cannot open checkpoint {path}: {e}")
    with f:
        reader = _Reader(f, path)
        magic, version, kind, *dims, count = _HEADER.unpack(reader.take(_HEADER.size))
        if magic != MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        if kind not in (KIND_FLOAT32, KIND_INT8):
            raise CheckpointFormatError(f"{path}: unknown kind {kind}")
        config = ModelConfig(*dims)

        tensors: "OrderedDict[str, object]" = OrderedDict()
        for _ in range(count):
            name, shape = reader.tensor_prefix()
            size = int(np.prod(shape)) if shape else 1
            if kind == KIND_FLOAT32:
                data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
                tensors[name] = data.astype(np.float32)
            else:
                scale = reader.f32()
                values = np.frombuffer(reader.take(size), dtype=np.int8).reshape(shape).copy()
                tensors[name] = QuantizedTensor(values=values, scale=float(scale))
        head = None
        if kind == KIND_INT8:
            head = {"w_scale": reader.f32(), "b_shift": reader.f32()}
        if f.read(1):
            raise CheckpointFormatError(f"{path}: trailing bytes after last tensor")
    return kind, config, tensors, head


def load_checkpoint(path: str, dtype=np.float32) -> ModelParams:
    """Load a float checkpoint, or dequantize an int8 one"""
    kind, config, tensors, head = _read(path)
    try:
        if kind == KIND_INT8:
            return dequantize(QuantizedModel(config, tensors, head), dtype)
        return ModelParams.from_named_tensors(config, tensors, dtype)
    except ValueError as e:
        raise CheckpointFormatError(f"{path}: {e}")
    except ArithmeticError as e:
        raise CheckpointFormatError(f"{path}: {e}")


def load_quantized(path: str) -> QuantizedModel:
    kind, config, tensors, head = _read(path)
    if kind != KIND_INT8:
        raise CheckpointFormatError(f"{path}: not an int8 checkpoint")
    return QuantizedModel(config=config, tensors=tensors, head=head)


def checkpoint_size_bytes(path: str) -> int:
    return os.path.getsize(path)


def describe_checkpoint(path: str) -> Dict[str, object]:
    """Small summary used in logs and reports"""
    kind, config, tensors, _ = _read(path)
    return {
        "path": path,
        "kind": "int8" if kind == KIND_INT8 else "float32",
        "config": config.to_dict(),
        "tensors": len(tensors),
        "bytes": checkpoint_size_bytes(path),
    }
