"""
Post-training dynamic-range quantization and the model container.

Kernels become per-tensor symmetric int8 (scale = max|w| / 127, codes in
[-127, 127]); biases and layer-norm parameters stay float32. At inference the
activation feeding each kernel is quantized on the fly.

Model file (little-endian):

    "RFFM" | version u16 | arch u8 | num_classes u16 | tensor_count u16
    | per tensor: name_len u8 + UTF-8 name | dtype u8 (0=f32, 1=i8) | rank u8
      | dims u32 x rank | (i8 only) scale f32 | raw values
"""
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np

from core.errors import FormatError, InputError
from services.layers import INFER
from services.model_zoo import ARCH_IDS, ModelGraph, build_model, forward, param_count, predict_proba
from services.tensor_core import INT8_MAX, symmetric_int8

logger = logging.getLogger(__name__)

MAGIC = b"RFFM"
VERSION = 1
DTYPE_F32 = 0
DTYPE_I8 = 1
_HEADER = struct.Struct("<4sHBHH")
ARCH_BY_ID = {v: k for k, v in ARCH_IDS.items()}
KB = 1024.0


@dataclass(frozen=True)
class QuantizedTensor:
    values: np.ndarray
    scale: float
    shape: Tuple[int, ...]

    def dequantize(self) -> np.ndarray:
        return (self.values.astype(np.float32) * np.float32(self.scale)).reshape(self.shape)


def quantize_tensor(w: np.ndarray) -> QuantizedTensor:
    w = np.asarray(w)
    if not np.all(np.isfinite(w)):
        raise InputError("Cannot quantize a tensor with non-finite values")
    codes, scale = symmetric_int8(w, work_dtype=np.float64)
    return QuantizedTensor(codes, scale, tuple(w.shape))


def is_kernel(name: str) -> bool:
    return name.endswith("kernel")


@dataclass
class QuantizedModel:
    architecture: str
    num_classes: int
    tensors: Dict[str, Union[QuantizedTensor, np.ndarray]]
    graph: ModelGraph = field(init=False, repr=False)

    def __post_init__(self):
        # the execution graph is built once; quantized_forward only reads it
        self.graph = _execution_graph(self)

    def kernels(self) -> Dict[str, QuantizedTensor]:
        return {k: v for k, v in self.tensors.items() if isinstance(v, QuantizedTensor)}

    def float_tensors(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not isinstance(v, QuantizedTensor)}


def _execution_graph(qmodel: QuantizedModel) -> ModelGraph:
    graph = build_model(qmodel.architecture, qmodel.num_classes)
    expected = graph.named_parameters()
    if list(expected) != list(qmodel.tensors):
        raise FormatError(f"Tensor set does not match the {qmodel.architecture} architecture")
    for name, value in qmodel.tensors.items():
        owner, key = graph.parameter_owner(name)
        if isinstance(value, QuantizedTensor):
            graph.set_parameter(name, value.dequantize())
            codes = value.values.reshape(-1, value.shape[-1]).astype(np.float32)
            owner.quantized[key] = (codes, value.scale)
        else:
            graph.set_parameter(name, value)
    return graph


def quantize_model(model: ModelGraph) -> QuantizedModel:
    tensors: Dict[str, Union[QuantizedTensor, np.ndarray]] = {}
    for name, value in model.named_parameters().items():
        tensors[name] = quantize_tensor(value) if is_kernel(name) else value.astype(np.float32).copy()
    qmodel = QuantizedModel(model.architecture, model.num_classes, tensors)
    logger.info(f"Quantized {model.architecture}: {len(qmodel.kernels())} int8 kernels, "
                f"{len(qmodel.float_tensors())} float tensors")
    return qmodel


def dequantize_model(qmodel: QuantizedModel) -> ModelGraph:
    model = build_model(qmodel.architecture, qmodel.num_classes)
    for name, value in qmodel.tensors.items():
        model.set_parameter(name, value.dequantize() if isinstance(value, QuantizedTensor) else value.copy())
    return model


def quantized_forward(qmodel: QuantizedModel, batch: np.ndarray) -> np.ndarray:
    return forward(qmodel.graph, batch, INFER)


def predict(model: "AnyModel", batch: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Infer-mode probabilities for either a float or a quantized model."""
    if isinstance(model, QuantizedModel):
        return predict_proba(model.graph, batch, batch_size)
    return predict_proba(model, batch, batch_size)


# --- 직렬화 ---

AnyModel = Union[ModelGraph, QuantizedModel]


def _model_tensors(model: AnyModel) -> Dict[str, Union[QuantizedTensor, np.ndarray]]:
    if isinstance(model, QuantizedModel):
        return model.tensors
    return model.named_parameters()


def model_to_bytes(model: AnyModel) -> bytes:
    tensors = _model_tensors(model)
    out = bytearray(_HEADER.pack(MAGIC, VERSION, ARCH_IDS[model.architecture], model.num_classes, len(tensors)))
    for name, value in tensors.items():
        raw_name = name.encode("utf-8")
        out += struct.pack("<B", len(raw_name)) + raw_name
        if isinstance(value, QuantizedTensor):
            shape = value.shape
            out += struct.pack("<BB", DTYPE_I8, len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
            out += struct.pack("<f", value.scale) + value.values.astype("<i1").tobytes()
        else:
            shape = value.shape
            out += struct.pack("<BB", DTYPE_F32, len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
            out += np.ascontiguousarray(value, dtype="<f4").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, size: int, what: str, tensor: Optional[str] = None) -> bytes:
        if self.offset + size > len(self.blob):
            raise FormatError(f"Truncated {what}", offset=self.offset, tensor=tensor)
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str, tensor: Optional[str] = None):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what, tensor))


def model_from_bytes(blob: bytes) -> AnyModel:
    reader = _Reader(blob)
    magic, version, arch_id, num_classes, count = reader.unpack(_HEADER.format, "model header")
    if magic != MAGIC:
        raise FormatError(f"Bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"Unsupported model version {version}", offset=4)
    if arch_id not in ARCH_BY_ID:
        raise FormatError(f"Unknown architecture id {arch_id}", offset=6)
    architecture = ARCH_BY_ID[arch_id]
    if num_classes < 2:
        raise FormatError(f"Model declares {num_classes} classes", offset=7)
    reference = build_model(architecture, num_classes).named_parameters()
    if count != len(reference):
        raise FormatError(f"{architecture} has {len(reference)} tensors, file declares {count}", offset=9)

    tensors: Dict[str, Union[QuantizedTensor, np.ndarray]] = {}
    for expected_name, expected in reference.items():
        start = reader.offset
        (name_len,) = reader.unpack("<B", "tensor name length")
        name = reader.take(name_len, "tensor name").decode("utf-8", errors="replace")
        if name != expected_name:
            raise FormatError(f"Expected tensor '{expected_name}', found '{name}'", offset=start, tensor=name)
        dtype, rank = reader.unpack("<BB", "tensor descriptor", name)
        dims = tuple(reader.unpack(f"<{rank}I", "tensor dims", name)) if rank else ()
        if dims != expected.shape:
            raise FormatError(f"Shape {dims} disagrees with the architecture's {expected.shape}",
                              offset=start, tensor=name)
        size = int(np.prod(dims))
        if dtype == DTYPE_I8:
            if not is_kernel(name):
                raise FormatError("Only kernels may be stored as int8", offset=start, tensor=name)
            (scale,) = reader.unpack("<f", "scale", name)
            if not (np.isfinite(scale) and scale > 0):
                raise FormatError(f"Invalid scale {scale}", offset=start, tensor=name)
            codes = np.frombuffer(reader.take(size, "int8 payload", name), dtype="<i1").astype(np.int8).reshape(dims)
            if size and codes.min() < -INT8_MAX:
                raise FormatError(f"int8 code {int(codes.min())} outside [-127, 127]", offset=start, tensor=name)
            tensors[name] = QuantizedTensor(codes, float(scale), dims)
        elif dtype == DTYPE_F32:
            raw = reader.take(4 * size, "float payload", name)
            tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
        else:
            raise FormatError(f"Unknown dtype code {dtype}", offset=start, tensor=name)
    if reader.offset != len(blob):
        raise FormatError("Trailing bytes after the last tensor", offset=reader.offset)

    if any(isinstance(v, QuantizedTensor) for v in tensors.values()):
        return QuantizedModel(architecture, num_classes, tensors)
    model = build_model(architecture, num_classes)
    for name, value in tensors.items():
        model.set_parameter(name, value)
    return model


def save_model(model: AnyModel, path: str) -> str:
    blob = model_to_bytes(model)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(blob)
    kind = "quantized" if isinstance(model, QuantizedModel) else "float"
    logger.info(f"Saved {kind} {model.architecture} model: {path} ({len(blob) / KB:.2f} KB)")
    return path


def load_model(path: str) -> AnyModel:
    with open(path, "rb") as f:
        blob = f.read()
    model = model_from_bytes(blob)
    logger.info(f"Loaded {model.architecture} model from {path}")
    return model


def size_report(float_path: str, quant_path: str) -> Dict[str, float]:
    float_kb = os.path.getsize(float_path) / KB
    quant_kb = os.path.getsize(quant_path) / KB
    return {
        "float_kb": round(float_kb, 2),
        "quantized_kb": round(quant_kb, 2),
        "ratio": round(quant_kb / float_kb, 4),
        "times_smaller": round(float_kb / quant_kb, 2),
    }


def model_params(model: AnyModel) -> int:
    graph = model.graph if isinstance(model, QuantizedModel) else model
    return param_count(graph)
