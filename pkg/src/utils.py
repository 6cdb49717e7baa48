# -*- coding: utf-8 -*-
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import numpy as np
import yaml
from dotenv import load_dotenv


REQUIRED_SECTIONS = ("simulation", "churn", "replica_caps", "sp_pool")
OUT_ROOT_ENV = "DCB_OUT_ROOT"
DEFAULT_OUT_ROOT = "data/runs"


class ConfigError(ValueError):
    """Некорректный или противоречивый конфиг"""


def load_config(config_path: str = "config.yaml") -> dict:
    """
    Загрузка конфигурации симулятора

    Args:
        config_path: Путь к файлу конфигурации

    Returns:
        Словарь конфигурации
    """
    config_file = Path(config_path)

    if not config_file.exists():
        print(f"⚠️ {config_file.name} не найден!")
        print("   Скопируй config.yaml из корня репозитория или укажи --config")
        raise FileNotFoundError(f"Конфиг не найден: {config_path}")

    with open(config_file, "r", encoding="utf-8") as f:
        config = yaml.safe_load(f) or {}

    if not isinstance(config, dict):
        raise ConfigError(f"{config_path}: ожидается словарь верхнего уровня")

    missing = [s for s in REQUIRED_SECTIONS if s not in config]
    if missing:
        raise ConfigError(f"{config_path}: нет секций {', '.join(missing)}")

    return config


def get_out_root(override: Optional[str] = None) -> Path:
    """Корень для выходных каталогов: --out > $DCB_OUT_ROOT (.env) > data/runs"""
    if override:
        return Path(override)
    load_dotenv()
    return Path(os.environ.get(OUT_ROOT_ENV, DEFAULT_OUT_ROOT))


def config_hash(config: Dict[str, Any]) -> str:
    """Стабильный sha256 от канонического JSON конфига"""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def stream_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Independent random stream derived from the master seed.

    The spawn key addresses the stream, so adding draws to one stream
    never shifts another (SP churn vs. workflow arrivals).
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream)))


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; values from override win"""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def require_keys(section: Dict[str, Any], allowed: Iterable[str], where: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: неизвестные ключи {', '.join(unknown)}")


def write_json(path: Path, payload: Any):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)


def write_yaml(path: Path, payload: Any):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(payload, f, allow_unicode=True, default_flow_style=False, sort_keys=False)


def read_yaml(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)
