"""
Forward/backward kernels for the layer set used by the CNN and Transformer
models, plus loss, L2 penalty and Adam.

All kernels keep the dtype of their inputs; models run them in float32.
Layers cache activations only for train-mode forwards, so infer-mode
forwards on shared parameters do not touch layer state.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import DimensionError, InputError, ParameterError, StateError
from services.tensor_core import Rng, int8_matmul, quantize_activation

logger = logging.getLogger(__name__)

TRAIN = "train"
INFER = "infer"
ACTIVATIONS = ("none", "relu", "softmax")

LAYER_NORM_EPSILON = 1e-3
CCE_CLAMP = 1e-7


# --- Parameters ---

@dataclass
class LayerParams:
    tensors: Dict[str, np.ndarray]
    trainable: Dict[str, bool] = field(default_factory=dict)
    grads: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.tensors.items():
            self.trainable.setdefault(name, True)
            if self.trainable[name]:
                self.grads.setdefault(name, np.zeros_like(value))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def zero_grad(self) -> None:
        for name, grad in self.grads.items():
            grad.fill(0)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        if name in self.grads:
            self.grads[name] += grad

    def astype(self, dtype) -> None:
        for name in list(self.tensors):
            self.tensors[name] = self.tensors[name].astype(dtype)
            if name in self.grads:
                self.grads[name] = np.zeros_like(self.tensors[name])


# --- Elementwise helpers ---

def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return p * (grad - np.sum(grad * p, axis=-1, keepdims=True))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0)
    if activation == "softmax":
        return softmax(z)
    return z


def _activation_backward(z: np.ndarray, y: np.ndarray, grad: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        # derivative is 0 at exactly 0
        return grad * (z > 0)
    if activation == "softmax":
        return softmax_backward(y, grad)
    return grad


def _check_activation(activation: str) -> None:
    if activation not in ACTIVATIONS:
        raise ParameterError(f"Unknown activation '{activation}', expected one of {ACTIVATIONS}")


# --- Functional forms ---

def dense_forward(x: np.ndarray, params: LayerParams, activation: str = "none") -> np.ndarray:
    _check_activation(activation)
    kernel = params["kernel"]
    if x.shape[-1] != kernel.shape[0]:
        raise DimensionError(f"Dense input width {x.shape[-1]} != kernel rows {kernel.shape[0]}")
    return _activate(x @ kernel + params["bias"], activation)


def _same_pads(k: int) -> Tuple[int, int]:
    total = k - 1
    before = total // 2
    return before, total - before


def _im2col(x: np.ndarray, kh: int, kw: int) -> Tuple[np.ndarray, Tuple[int, int, int, int]]:
    B, H, W, C = x.shape
    ph, pw = _same_pads(kh), _same_pads(kw)
    xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(B * H * W, kh * kw * C)
    return cols, xp.shape


def conv2d_forward(x: np.ndarray, params: LayerParams, relu: bool = False) -> np.ndarray:
    """SAME-padded, stride-1 cross-correlation on [H, W, Cin] or [B, H, W, Cin]."""
    single = x.ndim == 3
    x4 = x[None] if single else x
    kernel = params["kernel"]
    kh, kw, cin, cout = kernel.shape
    if x4.ndim != 4 or x4.shape[-1] != cin:
        raise DimensionError(f"Conv input {x.shape} does not match kernel {kernel.shape}")
    B, H, W, _ = x4.shape
    cols, _ = _im2col(x4, kh, kw)
    y = (cols @ kernel.reshape(-1, cout) + params["bias"]).reshape(B, H, W, cout)
    if relu:
        y = np.maximum(y, 0)
    return y[0] if single else y


def maxpool2d_forward(x: np.ndarray, pool: Tuple[int, int]) -> np.ndarray:
    single = x.ndim == 3
    y, _ = _maxpool(x[None] if single else x, pool)
    return y[0] if single else y


def _maxpool(x: np.ndarray, pool: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    ph, pw = pool
    B, H, W, C = x.shape
    if H % ph or W % pw:
        raise DimensionError(f"Pool {pool} does not divide spatial dims {(H, W)}")
    Ho, Wo = H // ph, W // pw
    windows = x.reshape(B, Ho, ph, Wo, pw, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, Ho, Wo, C, ph * pw)
    # argmax keeps the first maximum in scan order
    idx = np.argmax(windows, axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return y, idx


def layer_norm_forward(x: np.ndarray, params: LayerParams, epsilon: float = LAYER_NORM_EPSILON) -> np.ndarray:
    y, _ = _layer_norm(x, params["gamma"], params["beta"], epsilon)
    return y


def _layer_norm(x, gamma, beta, epsilon):
    mu = np.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    x_hat = xc * inv
    return gamma * x_hat + beta, (x_hat, inv)


def multi_head_self_attention(x: np.ndarray, params: LayerParams, num_heads: int = 2, key_dim: int = 64) -> np.ndarray:
    layer = MultiHeadSelfAttention("attention", x.shape[-1], num_heads, key_dim, params=params)
    return layer.forward(x, INFER)


def global_average_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the time axis of [T, d] or [B, T, d]."""
    if x.shape[-2] < 1:
        raise DimensionError("Cannot pool an empty sequence")
    return np.mean(x, axis=-2)


def dropout_apply(x: np.ndarray, rate: float, mode: str, rng: Optional[Rng]) -> np.ndarray:
    y, _ = _dropout(x, rate, mode, rng)
    return y


def _dropout(x, rate, mode, rng):
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"Dropout rate must be in [0, 1), got {rate}")
    if mode != TRAIN or rate == 0.0:
        return x, None
    if rng is None:
        raise ParameterError("Train-mode dropout needs an Rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def sparse_cce_loss(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean -log p[label], probabilities clamped below at 1e-7."""
    labels = _check_labels(probs, labels)
    picked = probs[np.arange(len(labels)), labels].astype(np.float64)
    return float(np.mean(-np.log(np.maximum(picked, CCE_CLAMP))))


def sparse_cce_grad(probs: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    labels = _check_labels(probs, labels)
    rows = np.arange(len(labels))
    picked = probs[rows, labels]
    grad = np.zeros_like(probs)
    live = picked > CCE_CLAMP
    grad[rows[live], labels[live]] = -1.0 / (len(labels) * picked[live])
    return grad


def _check_labels(probs: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise DimensionError(f"Probabilities {probs.shape} and labels {labels.shape} disagree")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise InputError(f"Label out of range [0, {probs.shape[1]})")
    return labels


def l2_penalty(tensors: Sequence[np.ndarray], factor: float, grads: Optional[Sequence[np.ndarray]] = None) -> float:
    """factor * sum(w^2); when grads are given, 2*factor*w is added to them in place."""
    if factor < 0:
        raise ParameterError(f"L2 factor must be >= 0, got {factor}")
    total = sum(float(np.sum(np.square(w, dtype=np.float64))) for w in tensors)
    if grads is not None and factor > 0:
        for w, g in zip(tensors, grads):
            g += (2.0 * factor) * w
    return factor * total


# --- Adam ---

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ParameterError("Adam betas must lie in [0, 1)")


def adam_update(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """One bias-corrected Adam step, applied to params in place."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"Gradient shape {g.shape} != parameter shape {p.shape} for '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / p.dtype.type(c1)
        v_hat = v / p.dtype.type(c2)
        p -= p.dtype.type(state.lr) * m_hat / (np.sqrt(v_hat) + p.dtype.type(state.epsilon))
    return params


# --- Layer classes ---

class Layer:
    """Base layer. Subclasses set params (or None) and implement _forward/_backward."""

    kind = "layer"
    l2_factor = 0.0
    regularized = ()

    def __init__(self, name: str, params: Optional[LayerParams] = None):
        self.name = name
        self.params = params
        self.quantized: Dict[str, Tuple[np.ndarray, float]] = {}
        self._cache = None

    def forward(self, x: np.ndarray, mode: str = INFER, rng: Optional[Rng] = None) -> np.ndarray:
        y, cache = self._forward(x, mode, rng)
        self._cache = cache if mode == TRAIN else None
        return y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError(f"backward called before a train-mode forward on layer '{self.name}'")
        if self.quantized:
            raise StateError(f"Layer '{self.name}' runs quantized kernels and cannot be differentiated")
        return self._backward(grad, self._cache)

    def _forward(self, x, mode, rng):
        raise NotImplementedError

    def _backward(self, grad, cache):
        raise NotImplementedError

    def _project(self, x2d: np.ndarray, key: str, x_quant: Optional[Tuple[np.ndarray, float]] = None) -> np.ndarray:
        """x2d @ kernel; x_quant passes activation codes already quantized from x2d."""
        if key in self.quantized:
            codes, scale = self.quantized[key]
            if x_quant is not None:
                return int8_matmul(x_quant[0], codes, scale, x_scale=x_quant[1])
            return int8_matmul(x2d, codes, scale)
        w = self.params[key]
        return x2d @ w.reshape(-1, w.shape[-1])

    def children(self) -> List["Layer"]:
        return []

    def iter_params(self) -> Iterator[Tuple[str, "Layer", str]]:
        """(qualified name, owning layer, key) in builder order."""
        if self.params is not None:
            for key in self.params.tensors:
                yield f"{self.name}/{key}", self, key
        for child in self.children():
            for qualified, owner, key in child.iter_params():
                yield f"{self.name}/{qualified}", owner, key

    def iter_layers(self) -> Iterator["Layer"]:
        yield self
        for child in self.children():
            yield from child.iter_layers()

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return input_shape


class Dense(Layer):
    kind = "dense"
    regularized = ("kernel",)

    def __init__(self, name, d_in, d_out, activation="none", l2=0.0, params=None):
        _check_activation(activation)
        if params is None:
            params = LayerParams({
                "kernel": np.zeros((d_in, d_out), dtype=np.float32),
                "bias": np.zeros(d_out, dtype=np.float32),
            })
        super().__init__(name, params)
        self.activation = activation
        self.l2_factor = l2

    def _forward(self, x, mode, rng):
        kernel = self.params["kernel"]
        if x.shape[-1] != kernel.shape[0]:
            raise DimensionError(f"Layer '{self.name}': input width {x.shape[-1]} != kernel rows {kernel.shape[0]}")
        lead = x.shape[:-1]
        x2 = x.reshape(-1, x.shape[-1])
        z = self._project(x2, "kernel") + self.params["bias"]
        y = _activate(z, self.activation)
        return y.reshape(*lead, -1), (x2, z, y, lead)

    def _backward(self, grad, cache):
        x2, z, y, lead = cache
        g = _activation_backward(z, y, grad.reshape(z.shape), self.activation)
        self.params.accumulate("kernel", x2.T @ g)
        self.params.accumulate("bias", g.sum(axis=0))
        dx = g @ self.params["kernel"].T
        return dx.reshape(*lead, -1)

    def output_shape(self, input_shape):
        return (*input_shape[:-1], self.params["kernel"].shape[1])


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, name, kernel_size, c_in, c_out, relu=True, params=None):
        kh, kw = kernel_size
        if params is None:
            params = LayerParams({
                "kernel": np.zeros((kh, kw, c_in, c_out), dtype=np.float32),
                "bias": np.zeros(c_out, dtype=np.float32),
            })
        super().__init__(name, params)
        self.relu = relu

    def _forward(self, x, mode, rng):
        kernel = self.params["kernel"]
        kh, kw, cin, cout = kernel.shape
        if x.ndim != 4 or x.shape[-1] != cin:
            raise DimensionError(f"Layer '{self.name}': input {x.shape} does not match kernel {kernel.shape}")
        B, H, W, _ = x.shape
        if "kernel" in self.quantized:
            # every input element lands in some window, so quantizing x equals quantizing cols
            x_codes, x_scale = quantize_activation(x)
            cols, xp_shape = _im2col(x_codes, kh, kw)
            z = self._project(cols, "kernel", (cols, x_scale)) + self.params["bias"]
        else:
            cols, xp_shape = _im2col(x, kh, kw)
            z = self._project(cols, "kernel") + self.params["bias"]
        y = np.maximum(z, 0) if self.relu else z
        return y.reshape(B, H, W, cout), (cols, z, xp_shape, x.shape)

    def _backward(self, grad, cache):
        cols, z, xp_shape, x_shape = cache
        kernel = self.params["kernel"]
        kh, kw, cin, cout = kernel.shape
        B, H, W, _ = x_shape
        g = grad.reshape(-1, cout)
        if self.relu:
            g = g * (z > 0)
        self.params.accumulate("kernel", (cols.T @ g).reshape(kernel.shape))
        self.params.accumulate("bias", g.sum(axis=0))
        dcols = (g @ kernel.reshape(-1, cout).T).reshape(B, H, W, kh, kw, cin)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + H, j:j + W, :] += dcols[:, :, :, i, j, :]
        top, left = _same_pads(kh)[0], _same_pads(kw)[0]
        return dxp[:, top:top + H, left:left + W, :]

    def output_shape(self, input_shape):
        return (*input_shape[:-1], self.params["kernel"].shape[-1])


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, name, pool=(2, 1)):
        super().__init__(name)
        self.pool = tuple(pool)

    def _forward(self, x, mode, rng):
        y, idx = _maxpool(x, self.pool)
        return y, (idx, x.shape)

    def _backward(self, grad, cache):
        idx, x_shape = cache
        ph, pw = self.pool
        B, H, W, C = x_shape
        Ho, Wo = H // ph, W // pw
        windows = np.zeros((B, Ho, Wo, C, ph * pw), dtype=grad.dtype)
        np.put_along_axis(windows, idx[..., None], grad[..., None], axis=-1)
        return windows.reshape(B, Ho, Wo, C, ph, pw).transpose(0, 1, 4, 2, 5, 3).reshape(x_shape)

    def output_shape(self, input_shape):
        H, W, C = input_shape
        return (H // self.pool[0], W // self.pool[1], C)


class Flatten(Layer):
    kind = "flatten"

    def _forward(self, x, mode, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def _backward(self, grad, cache):
        return grad.reshape(cache)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class Squeeze(Layer):
    """[B, T, F, 1] -> [B, T, F]."""

    kind = "squeeze"

    def _forward(self, x, mode, rng):
        if x.shape[-1] != 1:
            raise DimensionError(f"Layer '{self.name}': trailing dim must be 1, got {x.shape}")
        return x[..., 0], x.shape

    def _backward(self, grad, cache):
        return grad.reshape(cache)

    def output_shape(self, input_shape):
        return input_shape[:-1]


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, name, rate):
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"Dropout rate must be in [0, 1), got {rate}")
        super().__init__(name)
        self.rate = rate

    def _forward(self, x, mode, rng):
        return _dropout(x, self.rate, mode, rng)

    def _backward(self, grad, mask):
        return grad * mask

    def backward(self, grad):
        # a train-mode forward with rate 0 caches no mask; treat it as identity
        if self.rate == 0.0:
            return grad
        return super().backward(grad)


class LayerNorm(Layer):
    kind = "layer_norm"

    def __init__(self, name, dim, epsilon=LAYER_NORM_EPSILON, params=None):
        if dim < 1:
            raise ParameterError("LayerNorm needs d >= 1")
        if params is None:
            params = LayerParams({
                "gamma": np.ones(dim, dtype=np.float32),
                "beta": np.zeros(dim, dtype=np.float32),
            })
        super().__init__(name, params)
        self.epsilon = epsilon

    def _forward(self, x, mode, rng):
        return _layer_norm(x, self.params["gamma"], self.params["beta"], self.epsilon)

    def _backward(self, grad, cache):
        x_hat, inv = cache
        lead_axes = tuple(range(grad.ndim - 1))
        self.params.accumulate("gamma", np.sum(grad * x_hat, axis=lead_axes))
        self.params.accumulate("beta", np.sum(grad, axis=lead_axes))
        dx_hat = grad * self.params["gamma"]
        return inv * (dx_hat - dx_hat.mean(axis=-1, keepdims=True)
                      - x_hat * np.mean(dx_hat * x_hat, axis=-1, keepdims=True))


class MultiHeadSelfAttention(Layer):
    """softmax(Q K^T / sqrt(key_dim)) V per head, heads concatenated and projected back to d."""

    kind = "multi_head_attention"

    def __init__(self, name, d_model, num_heads=2, key_dim=64, params=None):
        inner = num_heads * key_dim
        if params is None:
            params = LayerParams({
                "query_kernel": np.zeros((d_model, inner), dtype=np.float32),
                "query_bias": np.zeros(inner, dtype=np.float32),
                "key_kernel": np.zeros((d_model, inner), dtype=np.float32),
                "key_bias": np.zeros(inner, dtype=np.float32),
                "value_kernel": np.zeros((d_model, inner), dtype=np.float32),
                "value_bias": np.zeros(inner, dtype=np.float32),
                "output_kernel": np.zeros((inner, d_model), dtype=np.float32),
                "output_bias": np.zeros(d_model, dtype=np.float32),
            })
        super().__init__(name, params)
        self.d_model = d_model
        self.num_heads = num_heads
        self.key_dim = key_dim

    def _split_heads(self, t, B, T):
        return t.reshape(B, T, self.num_heads, self.key_dim).transpose(0, 2, 1, 3)

    def _merge_heads(self, t, B, T):
        return t.transpose(0, 2, 1, 3).reshape(B * T, self.num_heads * self.key_dim)

    def _forward(self, x, mode, rng):
        single = x.ndim == 2
        x3 = x[None] if single else x
        if x3.ndim != 3 or x3.shape[-1] != self.d_model:
            raise DimensionError(f"Layer '{self.name}': expected [..., T, {self.d_model}], got {x.shape}")
        B, T, d = x3.shape
        x2 = x3.reshape(B * T, d)
        p = self.params
        xq = quantize_activation(x2) if self.quantized else None
        q = self._split_heads(self._project(x2, "query_kernel", xq) + p["query_bias"], B, T)
        k = self._split_heads(self._project(x2, "key_kernel", xq) + p["key_bias"], B, T)
        v = self._split_heads(self._project(x2, "value_kernel", xq) + p["value_bias"], B, T)
        scale = x.dtype.type(1.0 / math.sqrt(self.key_dim))
        attn = softmax(np.matmul(q, k.transpose(0, 1, 3, 2)) * scale)
        o2 = self._merge_heads(np.matmul(attn, v), B, T)
        y = (self._project(o2, "output_kernel") + p["output_bias"]).reshape(B, T, d)
        return (y[0] if single else y), (x2, q, k, v, attn, o2, B, T, single)

    def _backward(self, grad, cache):
        x2, q, k, v, attn, o2, B, T, single = cache
        p = self.params
        g2 = grad.reshape(B * T, self.d_model)
        p.accumulate("output_kernel", o2.T @ g2)
        p.accumulate("output_bias", g2.sum(axis=0))
        do = self._split_heads(g2 @ p["output_kernel"].T, B, T)
        dattn = np.matmul(do, v.transpose(0, 1, 3, 2))
        dv = np.matmul(attn.transpose(0, 1, 3, 2), do)
        dscores = softmax_backward(attn, dattn) * grad.dtype.type(1.0 / math.sqrt(self.key_dim))
        dq = np.matmul(dscores, k)
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), q)
        dx = np.zeros_like(x2)
        for prefix, dt in (("query", dq), ("key", dk), ("value", dv)):
            dt2 = self._merge_heads(dt, B, T)
            p.accumulate(f"{prefix}_kernel", x2.T @ dt2)
            p.accumulate(f"{prefix}_bias", dt2.sum(axis=0))
            dx += dt2 @ p[f"{prefix}_kernel"].T
        dx = dx.reshape(B, T, self.d_model)
        return dx[0] if single else dx


class GlobalAveragePool1D(Layer):
    kind = "global_average_pool"

    def _forward(self, x, mode, rng):
        return global_average_pool(x), x.shape

    def _backward(self, grad, x_shape):
        T = x_shape[-2]
        return np.broadcast_to(np.expand_dims(grad, -2) / grad.dtype.type(T), x_shape).copy()

    def output_shape(self, input_shape):
        return input_shape[1:]


class TransformerEncoderBlock(Layer):
    """Post-norm block: LN1(x + drop(MHA(x))), then LN2(y + drop(FFN(y)))."""

    kind = "transformer_block"

    def __init__(self, name, d_model=64, num_heads=2, key_dim=64, ff_dim=64, rate=0.1):
        super().__init__(name)
        self.attention = MultiHeadSelfAttention("attention", d_model, num_heads, key_dim)
        self.attention_dropout = Dropout("attention_dropout", rate)
        self.norm1 = LayerNorm("norm1", d_model)
        self.ffn1 = Dense("ffn1", d_model, ff_dim, activation="relu")
        self.ffn2 = Dense("ffn2", ff_dim, d_model)
        self.ffn_dropout = Dropout("ffn_dropout", rate)
        self.norm2 = LayerNorm("norm2", d_model)

    def children(self):
        return [self.attention, self.attention_dropout, self.norm1,
                self.ffn1, self.ffn2, self.ffn_dropout, self.norm2]

    def _forward(self, x, mode, rng):
        a = self.attention.forward(x, mode, rng)
        a = self.attention_dropout.forward(a, mode, rng)
        y = self.norm1.forward(x + a, mode, rng)
        f = self.ffn2.forward(self.ffn1.forward(y, mode, rng), mode, rng)
        f = self.ffn_dropout.forward(f, mode, rng)
        z = self.norm2.forward(y + f, mode, rng)
        return z, True

    def _backward(self, grad, cache):
        g_sum2 = self.norm2.backward(grad)
        g_f = self.ffn_dropout.backward(g_sum2)
        g_y = g_sum2 + self.ffn1.backward(self.ffn2.backward(g_f))
        g_sum1 = self.norm1.backward(g_y)
        g_a = self.attention_dropout.backward(g_sum1)
        return g_sum1 + self.attention.backward(g_a)
