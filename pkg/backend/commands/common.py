import argparse
import json
import logging
import sys
from typing import Dict

import pandas as pd

from core.config import settings
from services.data_loader import load_dataset
from services.signal_data import Dataset, normalize_dataset
from services.utils import sanitize_for_json

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ("json", "csv")


# --- Helper: 공통 플래그 ---

def add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default: config 'seed', shipped as 42)")


def add_out(parser: argparse.ArgumentParser, required: bool = True, help: str = "output path") -> None:
    parser.add_argument("--out", required=required, help=help)


def add_format(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", choices=OUTPUT_FORMATS, default="json",
                        help="report format (default: json)")


def resolve_seed(args) -> int:
    return settings.default_seed if args.seed is None else args.seed


def load_normalized(path: str) -> Dataset:
    """Every model-facing command works on unit-RMS captures."""
    return normalize_dataset(load_dataset(path))


def emit(payload: Dict, fmt: str = "json", stream=None) -> None:
    """Print a flat result record as JSON or a one-row CSV."""
    stream = stream or sys.stdout
    if fmt == "csv":
        pd.DataFrame([sanitize_for_json(payload)]).to_csv(stream, index=False)
    else:
        stream.write(json.dumps(sanitize_for_json(payload), indent=2) + "\n")


def unit_interval(value: str) -> float:
    """argparse type for a threshold in (0, 1]."""
    try:
        tau = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value}")
    if not 0.0 < tau <= 1.0:
        raise argparse.ArgumentTypeError(f"threshold must be in (0, 1], got {value}")
    return tau


def size_list(value: str):
    try:
        sizes = [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError(f"batch sizes must be >= 1, got {value}")
    return sizes
