"""
The two fingerprinting architectures: a 4-block CNN and a single-block
Transformer encoder, both over (256, 2, 1) IQ inputs.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import DimensionError, ParameterError, StateError
from services.layers import (
    INFER, TRAIN, Conv2D, Dense, Dropout, Flatten, GlobalAveragePool1D, Layer,
    MaxPool2D, Squeeze, TransformerEncoderBlock, l2_penalty, sparse_cce_grad,
    sparse_cce_loss,
)
from services.tensor_core import Rng, as_tensor

logger = logging.getLogger(__name__)

CNN = "CNN"
TRANSFORMER = "TRANSFORMER"
ARCHITECTURES = (CNN, TRANSFORMER)
ARCH_IDS = {CNN: 1, TRANSFORMER: 2}

SIGNAL_LEN = 256
INPUT_SHAPE = (SIGNAL_LEN, 2, 1)
L2_FACTOR = 1e-4


@dataclass
class ModelGraph:
    architecture: str
    num_classes: int
    layers: List[Layer]
    input_shape: Tuple[int, ...] = INPUT_SHAPE
    _last_probs: Optional[np.ndarray] = field(default=None, repr=False)

    # --- parameter access ---

    def named_parameters(self) -> Dict[str, np.ndarray]:
        return {name: owner.params.tensors[key] for name, owner, key in self._slots()}

    def named_gradients(self) -> Dict[str, np.ndarray]:
        return {name: owner.params.grads[key] for name, owner, key in self._slots()
                if owner.params.trainable[key]}

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        for qualified, owner, key in self._slots():
            if qualified == name:
                current = owner.params.tensors[key]
                if current.shape != value.shape:
                    raise DimensionError(f"Shape {value.shape} does not fit '{name}' {current.shape}")
                owner.params.tensors[key] = np.ascontiguousarray(value, dtype=current.dtype)
                return
        raise KeyError(name)

    def parameter_owner(self, name: str) -> Tuple[Layer, str]:
        for qualified, owner, key in self._slots():
            if qualified == name:
                return owner, key
        raise KeyError(name)

    def _slots(self):
        for layer in self.layers:
            yield from layer.iter_params()

    def zero_grad(self) -> None:
        for layer in self.all_layers():
            if layer.params is not None:
                layer.params.zero_grad()

    def all_layers(self) -> List[Layer]:
        return [sub for layer in self.layers for sub in layer.iter_layers()]

    def regularized_tensors(self) -> List[Tuple[np.ndarray, np.ndarray, float]]:
        out = []
        for layer in self.all_layers():
            for key in layer.regularized:
                if layer.l2_factor > 0:
                    out.append((layer.params.tensors[key], layer.params.grads[key], layer.l2_factor))
        return out

    def l2_loss(self) -> float:
        return sum(l2_penalty([w], factor) for w, _, factor in self.regularized_tensors())

    @property
    def dtype(self):
        return next(iter(self.named_parameters().values())).dtype

    def astype(self, dtype) -> "ModelGraph":
        """Cast every parameter in place (gradient checks promote to float64)."""
        for layer in self.all_layers():
            if layer.params is not None:
                layer.params.astype(dtype)
        return self


# --- 초기화 (Glorot uniform, seeded) ---

def _glorot(rng: Rng, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _initialize(model: ModelGraph, seed: int) -> None:
    rng = Rng(seed, stream=ARCH_IDS[model.architecture])
    for name, owner, key in model._slots():
        tensor = owner.params.tensors[key]
        if not key.endswith("kernel"):
            continue
        if tensor.ndim == 4:
            kh, kw, cin, cout = tensor.shape
            fan_in, fan_out = kh * kw * cin, kh * kw * cout
        else:
            fan_in, fan_out = tensor.shape
        owner.params.tensors[key] = _glorot(rng, tensor.shape, fan_in, fan_out)


def _check_classes(num_classes: int) -> None:
    if num_classes < 2:
        raise ParameterError(f"num_classes must be >= 2, got {num_classes}")


def build_cnn(num_classes: int, seed: int = 0) -> ModelGraph:
    _check_classes(num_classes)
    layers: List[Layer] = [
        Conv2D("conv1", (3, 2), 1, 8),
        MaxPool2D("pool1", (2, 1)),
        Conv2D("conv2", (3, 2), 8, 16),
        MaxPool2D("pool2", (2, 1)),
        Conv2D("conv3", (3, 1), 16, 32),
        MaxPool2D("pool3", (2, 1)),
        Conv2D("conv4", (3, 1), 32, 16),
        Flatten("flatten"),
        Dense("dense1", 32 * 2 * 16, 100, activation="relu", l2=L2_FACTOR),
        Dense("dense2", 100, 80, activation="relu", l2=L2_FACTOR),
        Dropout("dropout", 0.5),
        Dense("output", 80, num_classes, activation="softmax", l2=L2_FACTOR),
    ]
    model = ModelGraph(CNN, num_classes, layers)
    _initialize(model, seed)
    return model


def build_transformer(num_classes: int, seed: int = 0) -> ModelGraph:
    _check_classes(num_classes)
    layers: List[Layer] = [
        Squeeze("sequence"),
        Dense("embedding", 2, 64),
        TransformerEncoderBlock("encoder", d_model=64, num_heads=2, key_dim=64, ff_dim=64, rate=0.1),
        GlobalAveragePool1D("pool"),
        Dense("head", 64, 64, activation="relu"),
        Dropout("dropout", 0.1),
        Dense("output", 64, num_classes, activation="softmax"),
    ]
    model = ModelGraph(TRANSFORMER, num_classes, layers)
    _initialize(model, seed)
    return model


BUILDERS: Dict[str, Callable[..., ModelGraph]] = {CNN: build_cnn, TRANSFORMER: build_transformer}


def build_model(architecture: str, num_classes: int, seed: int = 0) -> ModelGraph:
    arch = architecture.upper()
    if arch not in BUILDERS:
        raise ParameterError(f"Unknown architecture '{architecture}', expected one of {ARCHITECTURES}")
    return BUILDERS[arch](num_classes, seed=seed)


# --- 실행 ---

def forward(model: ModelGraph, batch: np.ndarray, mode: str = INFER, rng: Optional[Rng] = None) -> np.ndarray:
    """Class probabilities [B, num_classes] for a [B, 256, 2, 1] batch."""
    x = as_tensor(batch, dtype=model.dtype)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(model.input_shape):
        raise DimensionError(f"Expected batch shape [B, {', '.join(map(str, model.input_shape))}], got {x.shape}")
    if mode == TRAIN and rng is None:
        raise ParameterError("Train-mode forward needs an Rng for dropout")
    for layer in model.layers:
        x = layer.forward(x, mode, rng)
    model._last_probs = x if mode == TRAIN else None
    return x


def backward(model: ModelGraph, labels: Sequence[int]) -> Dict[str, np.ndarray]:
    """
    Gradients of sparse CCE + L2 penalty w.r.t. every trainable tensor,
    for the batch of the preceding train-mode forward.
    """
    if model._last_probs is None:
        raise StateError("backward called before a train-mode forward")
    model.zero_grad()
    grad = sparse_cce_grad(model._last_probs, labels)
    for layer in reversed(model.layers):
        grad = layer.backward(grad)
    for w, g, factor in model.regularized_tensors():
        l2_penalty([w], factor, grads=[g])
    return model.named_gradients()


def loss(model: ModelGraph, probs: np.ndarray, labels: Sequence[int]) -> float:
    return sparse_cce_loss(probs, labels) + model.l2_loss()


def predict_proba(model: ModelGraph, batch: np.ndarray, batch_size: int = 256) -> np.ndarray:
    outputs = [forward(model, batch[i:i + batch_size], INFER) for i in range(0, len(batch), batch_size)]
    if not outputs:
        return np.zeros((0, model.num_classes), dtype=np.float32)
    return np.concatenate(outputs, axis=0)


def intermediate_shapes(model: ModelGraph, batch: np.ndarray) -> List[Tuple[str, Tuple[int, ...]]]:
    """Per-layer output shapes (batch axis dropped) from an infer-mode pass."""
    x = as_tensor(batch, dtype=model.dtype)
    shapes = []
    for layer in model.layers:
        x = layer.forward(x, INFER)
        shapes.append((layer.name, tuple(x.shape[1:])))
    return shapes


def param_count(model: ModelGraph) -> int:
    return int(sum(t.size for t in model.named_parameters().values()))


def summary(model: ModelGraph) -> pd.DataFrame:
    rows = [{
        "tensor": name,
        "layer": name.rsplit("/", 1)[0],
        "shape": tuple(tensor.shape),
        "params": int(tensor.size),
    } for name, tensor in model.named_parameters().items()]
    return pd.DataFrame(rows, columns=["tensor", "layer", "shape", "params"])
