import copy
import dataclasses
import hashlib
import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, Optional, Type, TypeVar

from ml.exceptions import ConfigError

T = TypeVar("T")

DEFAULT_CONFIG_FILE = "config/ge_config.json"

DEFAULT_CONFIG: Dict[str, Dict[str, Any]] = {
    "runtime": {
        "seed": 0,
        "jobs": 1,
        "log_dir": "logs",
        "log_every": 100,
    },
    "data": {
        "n": 1000,
        "size": 16,
        "max_blobs": 2,
        "split": [0.9, 0.05, 0.05],
    },
    "began": {
        "latent_dim": 8,
        "gamma": 0.5,
        "lambda_k": 0.001,
        "k0": 0.0,
        "steps": 20000,
        "batch_size": 16,
        "learning_rate": 1e-4,
        "g_conv_layers": 4,
        "g_filters": 16,
        "d_depth": 4,
        "d_filters": 8,
        "d_bottleneck": 16,
        "d_decoder_conv_layers": 4,
        "d_decoder_filters": 16,
        "sample_every": 1000,
    },
    "autoenc": {
        "variant": "ge1",
        "d": 4,
        "f": 8,
        "m": 8,
        "decoder_conv_layers": 2,
        "decoder_filters": None,
        "fake_ratio": 0.5,
        "n_total": 2000,
        "steps": 10000,
        "batch_size": 16,
        "learning_rate": 1e-4,
    },
    "solver": {
        "lambda": 1e-3,
        "iterations": 500,
        "restarts": 2,
        "learning_rate": 0.1,
    },
    "lasso": {
        "alpha": 0.1,
        "iterations": 1000,
        "overcomplete": 2,
        "fista": False,
        "power_iterations": 50,
        "step_size": None,
    },
    "eval": {
        "data": "data/blobs",
        "n_test": 20,
        "n_fake": 20,
        "methods": ["lasso", "ga", "ge1"],
        "budgets": {"lasso": 32, "ga": 8, "ge0": 16, "ge1": 8},
        "sweep_budgets": [4, 8, 16],
        "tasks": ["denoise", "deblur", "superres", "inpaint"],
        "sigma": 0.4,
        "blur_sigma": 1.0,
        "blur_size": 5,
        "factor": 4,
        "mask_rect": [5, 5, 7, 7],
        "checkpoints": {
            "generator": "runs/gan/generator.gec",
            "discriminator": "runs/gan/discriminator.gec",
            "ge0_encoder": "runs/ae_ge0/encoder.gec",
            "ge1_encoder": "runs/ae_ge1/encoder.gec",
        },
        "encoder_dir": "runs/sweep",
    },
}


def load_config(config_file: Optional[str] = None) -> Dict[str, Dict[str, Any]]:
    """Load the JSON run config, filling every missing key from the defaults.

    A missing default config file is created with the defaults written out.
    """
    config_file = config_file or os.getenv("GE_CONFIG", DEFAULT_CONFIG_FILE)
    config = copy.deepcopy(DEFAULT_CONFIG)

    if os.path.exists(config_file):
        try:
            with open(config_file, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {config_file}: {e}") from e
        for section, values in loaded.items():
            if isinstance(values, dict) and isinstance(config.get(section), dict):
                config[section].update(values)
            else:
                config[section] = values
    elif config_file == DEFAULT_CONFIG_FILE:
        os.makedirs(os.path.dirname(config_file), exist_ok=True)
        with open(config_file, "w", encoding="utf-8") as f:
            json.dump(DEFAULT_CONFIG, f, indent=2)
        logging.getLogger(__name__).info(f"Created default config at {config_file}")
    else:
        raise ConfigError(f"config file not found: {config_file}")
    return config


def merge_overrides(config: Dict[str, Dict[str, Any]], section: str, overrides: Dict[str, Any]):
    """Apply command-line overrides; None means 'flag not given'."""
    target = config.setdefault(section, {})
    for key, value in overrides.items():
        if value is not None:
            target[key] = value
    return config


def config_hash(config: Dict[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_run_record(outdir: str, command: str, config: Dict[str, Any], wall_time: float,
                     extra: Optional[Dict[str, Any]] = None) -> str:
    """Echo the effective config into <outdir>/run.json; the only file holding wall time."""
    record = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": config.get("runtime", {}).get("seed"),
        "wall_time_s": round(wall_time, 3),
        "finished_at": datetime.now().isoformat(),
    }
    if extra:
        record.update(extra)
    path = os.path.join(outdir, "run.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, default=str)
    return path


def setup_logging(name: str = "ge_toolkit", log_dir: Optional[str] = None) -> logging.Logger:
    """File + console logging, one log file per tool and day."""
    log_dir = log_dir or os.getenv("GE_LOG_DIR", "logs")
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, f"{name}_{datetime.now().strftime('%Y%m%d')}.log")

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(),
        ],
    )
    return logging.getLogger(name)


def from_section(cls: Type[T], section: Optional[Dict[str, Any]], aliases: Optional[Dict[str, str]] = None) -> T:
    """Build a config dataclass from one config section, ignoring unrelated keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    aliases = aliases or {}
    kwargs = {}
    for key, value in (section or {}).items():
        key = aliases.get(key, key)
        if key in names and value is not None:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {cls.__name__}: {e}") from e
