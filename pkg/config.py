import json
import logging
import os

from errors import ConfigError

logger = logging.getLogger(__name__)

# Shipped defaults live next to the code; --config points somewhere else
CONFIG_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.json")

DEFAULT_CONFIG = {
    "model": "sdofs",
    "runs": 500,
    "steps": 400,
    "seed": 1,
    "particles": 5000,
    "filters": ["pakf", "ekf", "pf"],
    "input_std": 5.0,
    "prior_mean": None,   # None -> zero vector of the model's n_x
    "prior_cov": None,    # None -> identity
    "resample_threshold": 0.5,
    "workers": 1,
    "out": "results",
}


def _defaults():
    return json.loads(json.dumps(DEFAULT_CONFIG))


def load_config(path=None):
    """Load configuration from a JSON file, filling gaps from DEFAULT_CONFIG.

    With no path the shipped config.json is used, and a missing file just means
    defaults. An explicit path that cannot be read or parsed is a ConfigError.
    """
    explicit = path is not None
    path = path if explicit else CONFIG_FILE

    if not os.path.exists(path):
        if explicit:
            raise ConfigError(f"config file not found: {path}")
        return _defaults()

    try:
        with open(path, "r") as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"could not read config {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")

    unknown = sorted(set(data) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")

    # Ensure all default keys exist
    for k, v in _defaults().items():
        data.setdefault(k, v)

    logger.debug("loaded config from %s", path)
    return data


def merge_overrides(config, overrides):
    """Return a copy of config with every non-None override applied."""
    merged = dict(config)
    for k, v in overrides.items():
        if v is None:
            continue
        if k not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown config key: {k}")
        merged[k] = v
    return merged


def save_config(config, path):
    """Save configuration to file"""
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            json.dump(config, f, indent=2)
            f.write("\n")
        return True
    except OSError as e:
        logger.error("error saving config: %s", e)
        return False
