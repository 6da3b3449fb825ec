"""
Accuracy, confusion matrix, one-vs-rest ROC-AUC and the timestep
randomization test.
"""
import json
import logging
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, roc_auc_score

from core.errors import ConfigError, InputError, ParameterError
from services.benchmark import LatencyStats
from services.document_generator import read_table, write_json, write_table
from services.quantizer import AnyModel, predict
from services.signal_data import SIGNAL_LEN, Dataset
from services.tensor_core import Rng, rng_permutation
from services.utils import restore_nan, safe_float, safe_int

logger = logging.getLogger(__name__)

REPORT_FORMATS = ("json", "csv")
PERMUTATION_STREAM = 0x9E47


@dataclass
class MetricsReport:
    accuracy: float
    confusion: np.ndarray
    auc_per_class: List[float]
    auc_macro: float
    latency: Optional[LatencyStats] = None

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        if self.confusion.ndim != 2 or self.confusion.shape[0] != self.confusion.shape[1]:
            raise InputError(f"Confusion matrix must be square, got {self.confusion.shape}")

    @property
    def num_samples(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> Dict:
        payload = {
            "accuracy": float(self.accuracy),
            "confusion": self.confusion.tolist(),
            "auc_per_class": [float(a) for a in self.auc_per_class],
            "auc_macro": float(self.auc_macro),
        }
        if self.latency is not None:
            payload["latency"] = self.latency.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> "MetricsReport":
        latency = payload.get("latency")
        return cls(
            accuracy=float(payload["accuracy"]),
            confusion=np.asarray(payload["confusion"], dtype=np.int64),
            auc_per_class=[restore_nan(a) for a in payload["auc_per_class"]],
            auc_macro=restore_nan(payload["auc_macro"]),
            latency=LatencyStats.from_dict(latency) if latency else None,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetricsReport):
            return NotImplemented
        return (self.accuracy == other.accuracy
                and np.array_equal(self.confusion, other.confusion)
                and np.allclose(self.auc_per_class, other.auc_per_class, equal_nan=True, rtol=0, atol=0)
                and (self.auc_macro == other.auc_macro or (np.isnan(self.auc_macro) and np.isnan(other.auc_macro)))
                and self.latency == other.latency)


def predicted_labels(probs: np.ndarray) -> np.ndarray:
    """Top-1 class; np.argmax returns the first maximum, so ties go to the lowest index."""
    return np.argmax(probs, axis=1)


def roc_auc_ovr(scores: np.ndarray, labels: Sequence[int]) -> Tuple[List[float], float]:
    """
    Per-class one-vs-rest AUC and their unweighted mean. A class with no
    positives or no negatives gets NaN and is left out of the mean.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) == 0:
        raise InputError(f"scores must be [N>=1, C], got {scores.shape}")
    if len(labels) != len(scores):
        raise InputError(f"{len(labels)} labels for {len(scores)} score rows")

    per_class: List[float] = []
    for c in range(scores.shape[1]):
        positive = labels == c
        if positive.all() or not positive.any():
            logger.warning(f"AUC undefined for class {c}: {'no negatives' if positive.all() else 'no positives'}")
            per_class.append(float("nan"))
            continue
        per_class.append(float(roc_auc_score(positive, scores[:, c])))

    defined = [a for a in per_class if not np.isnan(a)]
    macro = float(np.mean(defined)) if defined else float("nan")
    return per_class, macro


def _check_classes(model: AnyModel, dataset: Dataset) -> None:
    if model.num_classes != dataset.num_classes:
        raise ConfigError(f"Model has {model.num_classes} classes but the dataset has {dataset.num_classes}")


def evaluate(model: AnyModel, dataset: Dataset, batch_size: int = 256) -> MetricsReport:
    _check_classes(model, dataset)
    if len(dataset) == 0:
        raise InputError("Cannot evaluate on an empty dataset")
    probs = predict(model, dataset.as_model_input(), batch_size)
    preds = predicted_labels(probs)
    cm = confusion_matrix(dataset.labels, preds, labels=list(range(dataset.num_classes)))
    accuracy = float(np.trace(cm) / cm.sum())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        auc_per_class, auc_macro = roc_auc_ovr(probs, dataset.labels)
    logger.info(f"Evaluated {model.architecture} on {len(dataset)} samples: "
                f"accuracy {accuracy:.4f}, macro AUC {auc_macro:.4f}")
    return MetricsReport(accuracy, cm, auc_per_class, auc_macro)


def prediction_agreement(reference: AnyModel, candidate: AnyModel, dataset: Dataset, batch_size: int = 256) -> float:
    """Fraction of samples on which both models pick the same top-1 class."""
    _check_classes(reference, dataset)
    _check_classes(candidate, dataset)
    x = dataset.as_model_input()
    a = predicted_labels(predict(reference, x, batch_size))
    b = predicted_labels(predict(candidate, x, batch_size))
    return float(np.mean(a == b)) if len(dataset) else float("nan")


def permute_timesteps(dataset: Dataset, seed: int, shared_permutation: bool = False) -> Dataset:
    """
    Reorders the 256 IQ rows of every record. Each record draws its own
    permutation unless `shared_permutation` is set; labels are untouched.
    """
    rng = Rng(seed, stream=PERMUTATION_STREAM)
    iq = np.empty_like(dataset.iq)
    if shared_permutation:
        perm = rng_permutation(rng, SIGNAL_LEN)
        iq[:] = dataset.iq[:, perm]
    else:
        for i in range(len(dataset)):
            iq[i] = dataset.iq[i, rng_permutation(rng.child(i), SIGNAL_LEN)]
    return dataset.with_iq(iq)


# --- 리포트 입출력 ---

def _report_rows(report: MetricsReport) -> pd.DataFrame:
    rows = [("accuracy", report.accuracy), ("auc_macro", report.auc_macro)]
    rows += [(f"auc_per_class/{c}", a) for c, a in enumerate(report.auc_per_class)]
    for r, row in enumerate(report.confusion):
        rows += [(f"confusion/{r}/{c}", int(v)) for c, v in enumerate(row)]
    if report.latency is not None:
        rows += [(f"latency/{k}", v) for k, v in report.latency.to_dict().items()]
    return pd.DataFrame(rows, columns=["field", "value"])


def _report_from_rows(df: pd.DataFrame) -> MetricsReport:
    fields = dict(zip(df["field"].astype(str), df["value"]))
    auc = sorted((safe_int(k.split("/")[1]), safe_float(v)) for k, v in fields.items() if k.startswith("auc_per_class/"))
    cells = [(safe_int(k.split("/")[1]), safe_int(k.split("/")[2]), safe_int(v))
             for k, v in fields.items() if k.startswith("confusion/")]
    size = len(auc)
    confusion = np.zeros((size, size), dtype=np.int64)
    for r, c, v in cells:
        confusion[r, c] = v
    latency = {k.split("/", 1)[1]: v for k, v in fields.items() if k.startswith("latency/")}
    return MetricsReport(
        accuracy=safe_float(fields["accuracy"]),
        confusion=confusion,
        auc_per_class=[a for _, a in auc],
        auc_macro=safe_float(fields["auc_macro"]),
        latency=LatencyStats.from_dict(latency) if latency else None,
    )


def export_report(report: MetricsReport, path: str, fmt: Optional[str] = None) -> str:
    fmt = (fmt or ("csv" if path.lower().endswith(".csv") else "json")).lower()
    if fmt not in REPORT_FORMATS:
        raise ParameterError(f"Unknown report format '{fmt}', expected one of {REPORT_FORMATS}")
    if fmt == "json":
        write_json(report.to_dict(), path)
    else:
        write_table(_report_rows(report), path)
    logger.info(f"Report written: {path} ({fmt})")
    return path


def load_report(path: str) -> MetricsReport:
    if path.lower().endswith(".csv"):
        return _report_from_rows(read_table(path))
    with open(path, "r", encoding="utf-8") as f:
        return MetricsReport.from_dict(json.load(f))
