import os
import json
import logging
from contextlib import contextmanager
from typing import Any, Dict, Optional
from dotenv import load_dotenv

from core.errors import ConfigError

# backend/core/config.py 위치에서 3단계 올라가야 루트입니다.
# 1. core 폴더
# 2. backend 폴더
# 3. 프로젝트 루트
BASE_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# .env 파일 로드
load_dotenv(os.path.join(BASE_DIR, ".env"))

logger = logging.getLogger(__name__)

DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": 42,
    "auth_threshold": 0.9,
    "training": {
        "learning_rate": 0.001,
        "epochs": 100,
        "batch_size": 32,
        "shuffle_each_epoch": True,
        "validation_fraction": 0.2,
    },
    "synthesis": {
        "num_devices": 10,
        "signals_per_device": 400,
        "snr_db": 20.0,
        "waveform": "preamble",
        "gain_range": [0.9, 1.1],
        "phase_range": [-0.1, 0.1],
        "dc_max": 0.05,
        "cfo_range": [-0.02, 0.02],
        "phase_noise_max": 0.01,
        "nonlinearity_range": [-0.05, 0.05],
    },
    "benchmark": {
        "runs": 1000,
        "warmup": 10,
    },
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class Settings:
    PROJECT_NAME: str = "RFFEdgeToolkit"
    VERSION: str = "1.0.0"

    # 루트 경로 저장
    BASE_DIR = BASE_DIR

    # 나머지 폴더들 (루트 기준)
    DATA_DIR = os.path.join(BASE_DIR, os.getenv("DATA_DIR", "data"))
    OUTPUT_DIR = os.path.join(BASE_DIR, os.getenv("OUTPUT_DIR", "outputs"))
    CONFIG_PATH = os.path.join(BASE_DIR, os.getenv("RFF_CONFIG_PATH", os.path.join("data", "system_config.json")))

    def __init__(self):
        self._override_path: Optional[str] = None

    def use_config_file(self, path: Optional[str]) -> None:
        """Layer a user JSON config over the shipped system_config.json."""
        if path and not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        self._override_path = path

    def _read_json(self, path: str) -> Dict[str, Any]:
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except FileNotFoundError:
            logger.warning(f"Config file missing, using defaults: {path}")
            return {}
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in {path}: {e}")

    def load_system_config(self) -> Dict[str, Any]:
        """Defaults <- data/system_config.json <- --config file."""
        config = _merge(DEFAULT_CONFIG, self._read_json(self.CONFIG_PATH))
        if self._override_path:
            config = _merge(config, self._read_json(self._override_path))
        return config

    @property
    def default_seed(self) -> int:
        with _typed("seed"):
            return int(self.load_system_config().get("seed", 42))

    @property
    def auth_threshold(self) -> float:
        with _typed("auth_threshold"):
            return float(self.load_system_config().get("auth_threshold", 0.9))

    def train_defaults(self):
        from services.trainer import TrainConfig
        with _typed("training"):
            t = self.load_system_config()["training"]
            return TrainConfig(
                learning_rate=float(t["learning_rate"]),
                epochs=int(t["epochs"]),
                batch_size=int(t["batch_size"]),
                shuffle_each_epoch=bool(t["shuffle_each_epoch"]),
                validation_fraction=float(t["validation_fraction"]),
                seed=self.default_seed,
            )

    def synthesis_defaults(self) -> Dict[str, Any]:
        with _typed("synthesis"):
            s = self.load_system_config()["synthesis"]
            return {
                **s,
                "num_devices": int(s["num_devices"]),
                "signals_per_device": int(s["signals_per_device"]),
                "snr_db": float(s["snr_db"]),
                "waveform": str(s["waveform"]),
            }

    def synthesis_ranges(self):
        from services.signal_data import ProfileRanges
        with _typed("synthesis"):
            return ProfileRanges.from_config(self.synthesis_defaults())

    def benchmark_defaults(self) -> Dict[str, Any]:
        with _typed("benchmark"):
            b = self.load_system_config()["benchmark"]
            return {"runs": int(b["runs"]), "warmup": int(b["warmup"])}


@contextmanager
def _typed(section: str):
    """Malformed or missing config values raise ConfigError naming the section."""
    try:
        yield
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Invalid '{section}' config value: {e!r}") from e


settings = Settings()
