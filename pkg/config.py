#!/usr/bin/python3
"""Run configuration, loaded from JSON files and merged over defaults."""
import copy
import json
import os
from pathlib import Path

_DATA_DIR = Path(__file__).resolve().parent / "data"

# Seed used when neither the command line, the config file nor RIFT_SEED
# provides one
DEFAULT_SEED = 0

# Per-subcommand defaults. The train section is filled from
# trainer.TrainConfig on first use, see _section_defaults().
_DEFAULTS = {
    "datagen": {
        "split": "A",
        "out": None,
        "seed": None,
        "n_a": None,
        "n_b": None,
        "resolution": None,
    },
    "evaluate": {
        "checkpoint": None,
        "data": None,
        "guides_per_source": 2,
        "batch_size": 64,
        "seed": None,
        "out": None,
        "grid": False,
    },
    "ablate": {
        "config": None,
        "out": None,
        "amplitudes": [0.0, 0.02, 0.05, 0.1, 0.2],
        "guides_per_source": 2,
        "seed": None,
    },
    "capacity-report": {
        "checkpoints": [],
        "data": None,
        "samples": 2000,
        "seed": None,
        "out": None,
    },
    "report": {
        "metrics": [],
        "evals": [],
        "out": None,
    },
}

# Keys holding paths that must exist once the config is merged
_EXISTING_PATHS = {
    "train": ("data", "resume"),
    "evaluate": ("checkpoint", "data"),
    "ablate": ("config",),
    "capacity-report": ("checkpoints", "data"),
    "report": ("metrics", "evals"),
}


class ConfigError(ValueError):
    """Invalid, unknown or unresolvable configuration."""


def resource_path(relative_path):
    """Return the absolute path of a file bundled under data/."""
    return _DATA_DIR / relative_path


def load_json(path) -> dict:
    """Read a JSON object from disk, raising ConfigError on any failure."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def merge(defaults: dict, data: dict, where: str = "") -> dict:
    """
    Merge data over defaults, recursing into nested dictionaries.

    Keys absent from defaults are rejected so typos surface instead of
    being silently ignored.
    """
    merged = copy.deepcopy(defaults)
    for key, value in data.items():
        name = f"{where}.{key}" if where else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {name}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            merged[key] = merge(defaults[key], value, name)
        else:
            merged[key] = value
    return merged


def _section_defaults(section: str) -> dict:
    if section == "train":
        # Imported here: trainer itself imports this module
        from trainer import TrainConfig
        return {
            **TrainConfig().to_dict(),
            "seed": None,
            "out": None,
            "resume": None,
            "restarts": 1,
        }
    try:
        return copy.deepcopy(_DEFAULTS[section])
    except KeyError:
        raise ConfigError(f"unknown config section: {section}")


def resolve_seed(value):
    """Apply the seed precedence: explicit value, RIFT_SEED, default."""
    if value is not None:
        return int(value)
    env = os.environ.get("RIFT_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"RIFT_SEED must be an integer, got {env!r}")
    return DEFAULT_SEED


def load_section(section: str, path=None, overrides: dict = None) -> dict:
    """
    Build the effective config for one subcommand.

    Args:
        section: Subcommand name (key of the defaults table)
        path: Optional JSON config file merged over the defaults
        overrides: Command-line values; None entries are skipped

    Returns the merged dict with the seed resolved.
    """
    cfg = _section_defaults(section)
    if path is not None:
        cfg = merge(cfg, load_json(path))
    if overrides:
        cfg = merge(cfg, {k: v for k, v in overrides.items()
                          if v is not None})
    if "seed" in cfg:
        cfg["seed"] = resolve_seed(cfg["seed"])
    _check_paths(section, cfg)
    return cfg


def _check_paths(section, cfg):
    for key in _EXISTING_PATHS.get(section, ()):
        value = cfg.get(key)
        paths = value if isinstance(value, list) else [value]
        for p in paths:
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{key}: path does not exist: {p}")


def write_effective(out_dir, section: str, cfg: dict) -> Path:
    """Persist the merged config next to a subcommand's outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "effective_config.json"
    payload = {"section": section, "config": cfg}
    path.write_text(
        json.dumps(payload, indent=2, default=str), encoding="utf-8"
    )
    return path
