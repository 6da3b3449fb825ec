"""
Dense tensor primitives and the seeded random source.

A Tensor is a C-contiguous float32 numpy array: shape is its shape, the flat
row-major buffer is its data. Element (i, j) of a [m, n] tensor sits at
data[i * n + j].
"""
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from core.errors import DimensionError, InputError, ParameterError

logger = logging.getLogger(__name__)

Tensor = npt.NDArray[np.float32]

FLOAT = np.float32
INT8_MAX = 127
# float32 represents every integer up to 2**24 exactly
_EXACT_F32_LIMIT = 2 ** 24


def as_tensor(values, dtype=FLOAT) -> Tensor:
    """Coerce to a contiguous float array and reject NaN/Inf."""
    arr = np.ascontiguousarray(values, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise InputError("Tensor contains non-finite values")
    return arr


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major offset of a multi-index."""
    if len(shape) != len(index):
        raise DimensionError(f"Index rank {len(index)} does not match shape rank {len(shape)}")
    offset = 0
    for dim, i in zip(shape, index):
        if not 0 <= i < dim:
            raise DimensionError(f"Index {tuple(index)} out of bounds for shape {tuple(shape)}")
        offset = offset * dim + i
    return offset


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"Inner dimensions differ: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def symmetric_int8(x: np.ndarray, work_dtype=np.float32) -> Tuple[np.ndarray, float]:
    """Per-tensor symmetric int8 codes and scale; all-zero input gets scale 1."""
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    scale = float(np.float32(peak / INT8_MAX))
    if scale <= 0.0:
        scale = 1.0
    scaled = x.astype(work_dtype, copy=False) / work_dtype(scale)
    q = np.clip(round_half_away(scaled), -INT8_MAX, INT8_MAX).astype(np.int8)
    return q, scale


def quantize_activation(x: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    On-the-fly per-tensor activation quantization. Same codes as
    symmetric_int8, kept as float32 so they feed the matmul directly.
    """
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    scale = float(np.float32(peak / INT8_MAX))
    if scale <= 0.0:
        scale = 1.0
    scaled = x.astype(FLOAT, copy=False) / FLOAT(scale)
    # |scaled| <= 127 by construction, so no clip
    return np.trunc(scaled + np.copysign(FLOAT(0.5), scaled)), scale


def int8_matmul(x: np.ndarray, w_codes: np.ndarray, w_scale: float, x_scale: Optional[float] = None) -> np.ndarray:
    """
    x[..., K] @ W[K, N] with W given as int8 codes.

    The activation is quantized per tensor on the fly (or, when x_scale is
    given, x already holds activation codes), the integer products are
    accumulated exactly, then rescaled by x_scale * w_scale.
    """
    if x.shape[-1] != w_codes.shape[0]:
        raise DimensionError(f"Inner dimensions differ: {x.shape} x {w_codes.shape}")
    if x_scale is None:
        x, x_scale = quantize_activation(x)
    k = w_codes.shape[0]
    acc_dtype = np.float32 if k * INT8_MAX * INT8_MAX < _EXACT_F32_LIMIT else np.float64
    acc = np.matmul(x.astype(acc_dtype, copy=False), w_codes.astype(acc_dtype, copy=False))
    return (acc * acc_dtype(x_scale * w_scale)).astype(FLOAT, copy=False)


class Rng:
    """
    Seeded PCG64 stream.

    The same seed (and stream key) gives the same sequence on every platform.
    Single owner: do not share one instance between threads.
    """

    def __init__(self, seed: int, stream: Union[int, Tuple[int, ...]] = ()):
        if seed < 0 or seed >= 2 ** 64:
            raise ParameterError(f"Seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.stream = (stream,) if isinstance(stream, int) else tuple(stream)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, key: int) -> "Rng":
        """Independent stream derived from this seed, e.g. one per epoch or record."""
        return Rng(self.seed, self.stream + (int(key),))

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)


def rng_permutation(rng: Rng, n: int) -> List[int]:
    """Fisher-Yates shuffle of 0..n-1."""
    if n < 0:
        raise ParameterError(f"Permutation length must be >= 0, got {n}")
    return [int(i) for i in rng.generator.permutation(n)]
