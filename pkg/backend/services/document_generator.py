import json
import logging
import os
from datetime import datetime
from typing import Any, Optional

import pandas as pd

from services.utils import sanitize_for_json

logger = logging.getLogger(__name__)

TABLE_FORMATS = (".csv", ".xlsx")


def _ensure_parent(path: str) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)


def write_table(df: pd.DataFrame, path: str) -> str:
    """CSV by default, Excel when the path ends in .xlsx."""
    _ensure_parent(path)
    if path.lower().endswith(".xlsx"):
        df.to_excel(path, index=False)
    else:
        df.to_csv(path, index=False)
    return path


def read_table(path: str) -> pd.DataFrame:
    if path.lower().endswith(".xlsx"):
        return pd.read_excel(path)
    return pd.read_csv(path, float_precision="round_trip")


def write_json(payload: Any, path: str) -> str:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(sanitize_for_json(payload), f, indent=2)
        f.write("\n")
    return path


class DocumentGenerator:
    """Writes tabular run artifacts into one output folder."""

    def __init__(self, output_dir):
        self.output_dir = output_dir

    def _resolve(self, filename: Optional[str], prefix: str, ext: str = ".csv") -> str:
        if filename is None:
            filename = f"{prefix}_{datetime.now().strftime('%Y%m%d_%H%M%S')}{ext}"
        if os.path.isabs(filename) or os.path.dirname(filename):
            return filename
        return os.path.join(self.output_dir, filename)

    def generate_history(self, history, filename: Optional[str] = None) -> str:
        """Training history: one row per epoch."""
        path = write_table(history.to_frame(), self._resolve(filename, "Train_History"))
        logger.info(f"History written: {path}")
        return path

    def generate_sweep(self, sweep_df: pd.DataFrame, filename: Optional[str] = None) -> str:
        """
        Batch-size sweep table. The per-epoch validation curve is stored as a
        JSON list per cell so both CSV and Excel keep it in one column.
        """
        df = sweep_df.copy()
        df["val_acc_history"] = [json.dumps([round(float(v), 6) for v in h]) for h in df["val_acc_history"]]
        path = write_table(df, self._resolve(filename, "Batch_Sweep"))
        logger.info(f"Sweep table written: {path}")
        return path

    def generate_summary(self, summary_df: pd.DataFrame, filename: Optional[str] = None) -> str:
        df = summary_df.copy()
        df["shape"] = [" x ".join(str(d) for d in shape) for shape in df["shape"]]
        path = write_table(df, self._resolve(filename, "Model_Summary"))
        logger.info(f"Model summary written: {path}")
        return path
