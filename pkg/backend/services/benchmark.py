"""
Single-sample inference latency harness.

Warm-up runs are untimed; the timed loop is strictly sequential on the
calling thread.
"""
import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from core.errors import DimensionError, ParameterError
from services.quantizer import AnyModel, predict

logger = logging.getLogger(__name__)

Z_95 = 1.96
MIN_WARMUP = 10


@dataclass(frozen=True)
class BenchmarkConfig:
    runs: int = 1000
    warmup: int = MIN_WARMUP

    def __post_init__(self):
        if self.runs < 2:
            raise ParameterError(f"runs must be >= 2, got {self.runs}")
        if self.warmup < MIN_WARMUP:
            raise ParameterError(f"warmup must be >= {MIN_WARMUP}, got {self.warmup}")


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    std_ms: float
    ci95_ms: float
    runs: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "mean_ms": round(self.mean_ms, 4),
            "std_ms": round(self.std_ms, 4),
            "ci95_ms": round(self.ci95_ms, 4),
            "runs": int(self.runs),
        }

    @classmethod
    def from_dict(cls, payload: Dict) -> "LatencyStats":
        return cls(float(payload["mean_ms"]), float(payload["std_ms"]),
                   float(payload["ci95_ms"]), int(payload["runs"]))


def latency_stats(timings_ms: Sequence[float]) -> LatencyStats:
    """
    Mean, sample std (ddof=1) and the 95% CI half-width 1.96·std/sqrt(n),
    in milliseconds rounded to 4 decimals.
    """
    t = np.asarray(timings_ms, dtype=np.float64)
    if t.size < 2:
        raise ParameterError(f"Need at least 2 timings, got {t.size}")
    std = float(np.std(t, ddof=1))
    ci = Z_95 * std / math.sqrt(t.size)
    return LatencyStats(round(float(np.mean(t)), 4), round(std, 4), round(ci, 4), int(t.size))


def _single_sample(sample: np.ndarray) -> np.ndarray:
    x = np.asarray(sample, dtype=np.float32)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != 1:
        raise DimensionError(f"Benchmark input must be one sample, got shape {np.shape(sample)}")
    return x


def benchmark_latency(model: AnyModel, sample: np.ndarray, runs: int = 1000, warmup: int = MIN_WARMUP) -> LatencyStats:
    config = BenchmarkConfig(runs=runs, warmup=warmup)
    x = _single_sample(sample)

    for _ in range(config.warmup):
        predict(model, x)

    timings = np.empty(config.runs, dtype=np.float64)
    for i in range(config.runs):
        t0 = time.perf_counter_ns()
        predict(model, x)
        timings[i] = (time.perf_counter_ns() - t0) / 1e6

    stats = latency_stats(timings)
    logger.info(f"{model.architecture} latency over {stats.runs} runs: "
                f"{stats.mean_ms:.4f} ms ± {stats.ci95_ms:.4f} (std {stats.std_ms:.4f})")
    return stats
