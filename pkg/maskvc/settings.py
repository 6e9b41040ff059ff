from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from dotenv import load_dotenv

from .errors import ConfigError

SCHEMA_VERSION = 1

ENV_DEFAULTS = {
    'MASKVC_SEED': '0',
    'MASKVC_PRESET': 'desk',
    'MASKVC_LOG_LEVEL': 'INFO',
    'MASKVC_NO_PROGRESS': '0',
    'MASKVC_THREADS': '0',
}


def load_environment(dotenv_path=None):
    """Read .env (never overriding real environment variables) and return the MASKVC_* view."""
    load_dotenv(dotenv_path=dotenv_path, override=False)
    return {key: os.environ.get(key, default) for key, default in ENV_DEFAULTS.items()}


def env_default(name):
    return os.environ.get(name, ENV_DEFAULTS[name])


def load_json_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found: {0}".format(path))
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("config {0} is not valid JSON: {1}".format(path, e))
    if not isinstance(data, dict):
        raise ConfigError("config {0} must hold a JSON object".format(path))
    version = data.pop('schema_version', None)
    if version != SCHEMA_VERSION:
        raise ConfigError("config {0} has schema_version {1}, expected {2}".format(path, version, SCHEMA_VERSION))
    return data


def save_json_config(data, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(dict({'schema_version': SCHEMA_VERSION}, **data), f, indent=2, sort_keys=True)
    return path


def config_fingerprint(data):
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha512(canonical.encode()).hexdigest()
