"""solver settings from toml files.

```toml
[solve]
alpha = 0.45
beta = 0.05
max-iters = 5000
safe_alpha = true
```

keys may use dashes or underscores. settings merge as defaults, then the file, then
explicit overrides.
"""

import logging
from dataclasses import replace
from pathlib import Path

from .solver import ConfigError, SolverConfig

__all__ = ("load_config", "read_settings", "merge_config", "ConfigError")

logger = logging.getLogger(__name__)

TYPES = dict(
    alpha=float,
    beta=float,
    rho=float,
    max_iters=int,
    tol=float,
    threads=int,
    safe_alpha=bool,
    trace_every=int,
    executor=str,
    gap_tol=float,
    lp_window=int,
    lp_tol=float,
)


def load_toml(x):
    from tomli import loads

    return loads(x)


def _coerce(key, value):
    kind = TYPES[key]
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if kind is str and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return kind(value)


def read_settings(text, source="<string>"):
    """the checked `[solve]` table of a toml document as a dict."""
    from tomli import TOMLDecodeError

    try:
        data = load_toml(text)
    except TOMLDecodeError as error:
        raise ConfigError(f"{source}: {error}") from error
    table = data.get("solve", {})
    if not isinstance(table, dict):
        raise ConfigError(f"{source}: [solve] must be a table")
    unknown = sorted(set(data) - {"solve"})
    if unknown:
        raise ConfigError(f"{source}: unknown tables {', '.join(unknown)}")
    settings = {}
    for key, value in table.items():
        name = key.replace("-", "_")
        if name not in TYPES:
            raise ConfigError(f"{source}: unknown setting {key!r}")
        settings[name] = _coerce(name, value)
    return settings


def load_config(path, base=None):
    """a `SolverConfig` with the settings of a toml file applied over `base`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as error:
        raise ConfigError(f"cannot read config {path}: {error}") from error
    settings = read_settings(text, path)
    logger.debug("config %s sets %s", path, ", ".join(sorted(settings)))
    return replace(SolverConfig() if base is None else base, **settings)


def merge_config(path=None, **overrides):
    """defaults, then the file at `path`, then the non-`None` overrides."""
    config = SolverConfig() if path is None else load_config(path)
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
