"""
Training loop (Adam + sparse CCE + L2) with per-epoch history, and the
batch-size sweep harness.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import ConfigError, ParameterError, StateError
from services.layers import TRAIN, AdamState, adam_update, sparse_cce_loss
from services.model_zoo import ModelGraph, backward, forward, predict_proba
from services.signal_data import Dataset, batches, split
from services.tensor_core import Rng

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 32
    shuffle_each_epoch: bool = True
    validation_fraction: float = 0.2
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ParameterError(f"validation_fraction must be in (0, 1), got {self.validation_fraction}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_acc: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def append(self, train_loss, train_acc, val_loss, val_acc, seconds) -> None:
        self.train_loss.append(train_loss)
        self.train_acc.append(train_acc)
        self.val_loss.append(val_loss)
        self.val_acc.append(val_acc)
        self.seconds.append(seconds)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": np.arange(1, len(self) + 1),
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "seconds": self.seconds,
        }, columns=HISTORY_COLUMNS)


def loss_and_accuracy(model: ModelGraph, dataset: Dataset, batch_size: int = 256) -> Tuple[float, float]:
    """Infer-mode CCE + L2 loss and top-1 accuracy."""
    if len(dataset) == 0:
        return float("nan"), float("nan")
    probs = predict_proba(model, dataset.as_model_input(), batch_size)
    loss = sparse_cce_loss(probs, dataset.labels) + model.l2_loss()
    acc = float(np.mean(np.argmax(probs, axis=1) == dataset.labels))
    return loss, acc


def train(
    model: ModelGraph,
    dataset: Dataset,
    config: TrainConfig,
    split_data: Optional[Tuple[Dataset, Dataset]] = None,
) -> Tuple[ModelGraph, TrainHistory]:
    """
    Trains in place and returns (model, history). The final model is the
    last-epoch model; epoch metrics come from an infer-mode pass after the
    epoch's updates.
    """
    if dataset.num_classes != model.num_classes:
        raise ConfigError(f"Dataset has {dataset.num_classes} classes but the model expects {model.num_classes}")
    if split_data is None:
        train_ds, val_ds = split(dataset, 1.0 - config.validation_fraction, seed=config.seed)
    else:
        train_ds, val_ds = split_data

    stream = batches(train_ds, config.batch_size, config.shuffle_each_epoch, seed=config.seed)
    dropout_rng = Rng(config.seed, stream=0xD409)
    state = AdamState(lr=config.learning_rate)
    params = model.named_parameters()
    history = TrainHistory()

    logger.info(f"Training {model.architecture} on {len(train_ds)} samples "
                f"(val {len(val_ds)}, batch {config.batch_size}, epochs {config.epochs})")
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        for xb, yb in stream:
            forward(model, xb, TRAIN, dropout_rng)
            grads = backward(model, yb)
            adam_update(state, params, grads)

        train_loss, train_acc = loss_and_accuracy(model, train_ds)
        val_loss, val_acc = loss_and_accuracy(model, val_ds)
        if not math.isfinite(train_loss):
            raise StateError(f"Training diverged at epoch {epoch} (loss={train_loss})")
        elapsed = time.perf_counter() - started
        history.append(train_loss, train_acc, val_loss, val_acc, elapsed)
        logger.info(f"Epoch {epoch}/{config.epochs} - loss {train_loss:.4f} - acc {train_acc:.4f} "
                    f"- val_loss {val_loss:.4f} - val_acc {val_acc:.4f} - {elapsed:.2f}s")

    return model, history


def _sweep_cell(builder, dataset, config, size, epochs):
    model = builder(dataset.num_classes, seed=config.seed)
    cell_config = replace(config, batch_size=size, epochs=epochs)
    started = time.perf_counter()
    _, history = train(model, dataset, cell_config)
    seconds = time.perf_counter() - started
    logger.info(f"Sweep batch={size}: {seconds:.2f}s, final val_acc {history.val_acc[-1]:.4f}")
    return {
        "batch_size": size,
        "seconds": seconds,
        "final_val_acc": history.val_acc[-1],
        "val_acc_history": list(history.val_acc),
    }


def batch_size_sweep(
    builder: Callable[..., ModelGraph],
    dataset: Dataset,
    sizes: Sequence[int] = (1, 8, 16, 32, 64),
    epochs: int = 100,
    config: Optional[TrainConfig] = None,
    max_workers: int = 1,
) -> pd.DataFrame:
    """One fresh model per batch size; rows keep the order of `sizes`."""
    if not sizes:
        raise ParameterError("sizes must not be empty")
    config = config or TrainConfig()
    if max_workers > 1:
        # each cell owns its model, split and RNG streams
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(lambda s: _sweep_cell(builder, dataset, config, s, epochs), sizes))
    else:
        rows = [_sweep_cell(builder, dataset, config, s, epochs) for s in sizes]
    return pd.DataFrame(rows, columns=["batch_size", "seconds", "final_val_acc", "val_acc_history"])
