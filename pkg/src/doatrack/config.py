"""Plain key-value run configuration: parse, canonical text, hashing.

Grammar: one `key = value` per line; blank lines and lines starting with #
are ignored. Values stay strings until a subcommand coerces them; canonical
text sorts keys so the config hash is stable. Every output directory gets a
manifest carrying the full resolved configuration, which is sufficient to
reproduce the run byte-for-byte.
"""

import hashlib

from .errors import ConfigError


def parse_config_text(text):
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        out[key] = value.strip()
    return out


def read_config_file(path):
    try:
        with open(path) as f:
            return parse_config_text(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")


def format_config(config):
    return "\n".join(f"{k} = {config[k]}" for k in sorted(config)) + "\n"


def config_hash(config):
    return hashlib.sha256(format_config(config).encode("utf-8")).hexdigest()[:16]


def coerce(config, key, kind, default=None):
    """Typed lookup: kind in {int, float, str, bool, floats (comma list)}."""
    if key not in config or config[key] == "":
        if default is None:
            raise ConfigError(f"missing required config key: {key}")
        return default
    raw = str(config[key])
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(p) for p in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {kind}")
