"""Module providing run configuration for typegram commands."""

from dataclasses import dataclass, field, fields, replace
import logging
import os
from pathlib import Path
import tomllib
from typing import Any, Optional, Sequence, Union

from typegram.engine.scoring import ScoringConfig
from typegram.errors import ConfigError
from typegram.metrics.selective import DEFAULT_TAU_GRID
from typegram.ngramdb.ensemble import (
    DEFAULT_PORTFOLIO,
    PORTFOLIO_PRESETS,
    check_portfolio,
)

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "TYPEGRAM_CONFIG"

_PATH_FIELDS = frozenset(
    {
        "corpus",
        "type_library",
        "signature_library",
        "calibration",
        "predictions",
        "output",
    }
)
# Settings that take one path or a list of them.
_PATH_LIST_FIELDS = frozenset({"manifest"})
_INT_FIELDS = frozenset({"k", "min_contexts", "threads"})
_FLOAT_FIELDS = frozenset({"struct_priority_margin", "weight_exponent"})
_BOOL_FIELDS = frozenset({"struct_priority"})
_STR_FIELDS = frozenset({"prefix", "log_level"})


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by every command.

    Values resolve as defaults, then the config file, then command-line flags.

    Environment Variables:
        - TYPEGRAM_CONFIG: config file used when none is passed explicitly.

    Examples:
    >>> config = load_config(None, portfolio="compact", tau=0.65)
    >>> config.portfolio
    (2, 8, 16, 64)
    >>> config.scoring().k
    3

    """

    portfolio: tuple[int, ...] = DEFAULT_PORTFOLIO
    k: int = 3
    tau: Optional[float] = None
    struct_priority: bool = False
    struct_priority_margin: float = 0.05
    weight_exponent: float = 1.0
    min_contexts: int = 1
    threads: int = 1
    corpus: Optional[Path] = None
    type_library: Optional[Path] = None
    signature_library: Optional[Path] = None
    manifest: tuple[Path, ...] = ()
    calibration: Optional[Path] = None
    predictions: Optional[Path] = None
    output: Optional[Path] = None
    tau_grid: tuple[Optional[float], ...] = field(default=DEFAULT_TAU_GRID)
    prefix: str = "HAL_"
    log_level: str = "INFO"

    def __post_init__(self) -> None:
        """Validate types and ranges.

        Raises:
            ConfigError: On a wrongly typed setting, or an invalid portfolio,
                thread count, k, margin or tau.

        """
        for name in sorted(_INT_FIELDS | _FLOAT_FIELDS | _BOOL_FIELDS | _STR_FIELDS):
            _coerce(name, getattr(self, name))
        try:
            check_portfolio(self.portfolio)
            self.scoring()
        except ValueError as exc:
            raise ConfigError(str(exc))
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        for tau in (self.tau, *self.tau_grid):
            if tau is not None and not 0.0 <= tau <= 1.0:
                raise ConfigError(f"tau must be in [0, 1] or none, got {tau}")
        if logging.getLevelName(self.log_level.upper()) not in range(0, 60):
            raise ConfigError(f"unknown log level {self.log_level!r}")

    def scoring(self) -> ScoringConfig:
        """Derive the engine's scoring configuration."""
        return ScoringConfig(
            k=self.k,
            weight_exponent=self.weight_exponent,
            struct_priority=self.struct_priority,
            struct_priority_margin=self.struct_priority_margin,
            min_contexts=self.min_contexts,
        )

    def require(self, name: str) -> Path:
        """Return the path setting ``name``, or fail when it is unset.

        Raises:
            ConfigError: If the setting is unset.

        """
        value = getattr(self, name)
        if value is None:
            raise ConfigError(
                f"'{name}' is required: pass --{name.replace('_', '-')} "
                f"or set it in the config file"
            )
        return value

    def manifests(self) -> tuple[Path, ...]:
        """Return the manifest paths, at least one.

        Raises:
            ConfigError: If no manifest is set.

        """
        if not self.manifest:
            raise ConfigError(
                "'manifest' is required: pass --manifest (once per bitness) "
                "or set it in the config file"
            )
        return self.manifest


def parse_tau(value: Union[str, float, None]) -> Optional[float]:
    """Parse a threshold; ``none`` and the empty string mean no threshold.

    Raises:
        ConfigError: If the value is neither a number nor ``none``.

    """
    if value is None:
        return None
    if isinstance(value, str):
        if value.strip().lower() in ("", "none"):
            return None
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"tau must be a number or 'none', got {value!r}")
    if isinstance(value, bool):
        raise ConfigError(f"tau must be a number or 'none', got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"tau must be a number or 'none', got {value!r}")


def parse_portfolio(value: Union[str, Sequence[int]]) -> tuple[int, ...]:
    """Parse a portfolio from a preset name, a comma list or a sequence.

    Raises:
        ConfigError: On unknown presets or non-integer radii.

    """
    parts: Any = value
    if isinstance(value, str):
        if value in PORTFOLIO_PRESETS:
            return PORTFOLIO_PRESETS[value]
        parts = [part.strip() for part in value.split(",") if part.strip()]
    try:
        return tuple(int(part) for part in parts)
    except (TypeError, ValueError):
        raise ConfigError(
            f"portfolio must be a preset ({', '.join(PORTFOLIO_PRESETS)}) "
            f"or a list of integers, got {value!r}"
        )


def _path(name: str, value: Any) -> Path:
    if not isinstance(value, (str, Path)):
        raise ConfigError(f"{name} must be a path, got {value!r}")
    return Path(value)


def _coerce(name: str, value: Any) -> Any:
    """Convert one raw setting to the type of its field.

    Raises:
        ConfigError: If the value has the wrong type.

    """
    if name == "portfolio":
        return parse_portfolio(value)
    if name == "tau":
        return parse_tau(value)
    if name == "tau_grid":
        if isinstance(value, str):
            value = value.split(",")
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"tau_grid must be a list, got {value!r}")
        return tuple(parse_tau(v) for v in value)
    if name in _PATH_FIELDS:
        return _path(name, value)
    if name in _PATH_LIST_FIELDS:
        items = value if isinstance(value, (list, tuple)) else [value]
        return tuple(_path(name, item) for item in items)
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    elif name in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    elif name in _BOOL_FIELDS and not isinstance(value, bool):
        raise ConfigError(f"{name} must be true or false, got {value!r}")
    elif name in _STR_FIELDS and not isinstance(value, str):
        raise ConfigError(f"{name} must be a string, got {value!r}")
    return value


def read_config_file(path: Union[str, Path]) -> dict[str, Any]:
    """Read a TOML key-value config file.

    Raises:
        ConfigError: If the file is missing, malformed or names unknown keys.

    """
    try:
        with open(path, "rb") as handle:
            document = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(document) - known)
    if unknown:
        raise ConfigError(f"config file {path} has unknown keys: {unknown}")
    base = Path(path).parent
    values = {name: _coerce(name, value) for name, value in document.items()}
    # Relative paths in a config file are relative to the file.
    for name in _PATH_FIELDS & values.keys():
        values[name] = base / values[name]
    for name in _PATH_LIST_FIELDS & values.keys():
        values[name] = tuple(base / item for item in values[name])
    return values


def load_config(path: Union[str, Path, None] = None, **overrides: Any) -> RunConfig:
    """Load run settings.

    Args:
        path (str | Path, optional): Config file; defaults to the file named by
            ``TYPEGRAM_CONFIG`` when that variable is set.
        **overrides: Settings that win over the file, such as parsed CLI flags.
            None values are ignored.

    Returns:
        RunConfig

    Raises:
        ConfigError: On unreadable files, unknown keys or invalid values.

    """
    if path is None:
        path = os.getenv(CONFIG_ENV_VAR) or None
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
        logger.debug("Loaded config file %s", path)
    known = {f.name for f in fields(RunConfig)}
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in known:
            raise ConfigError(f"unknown setting {name!r}")
        values[name] = _coerce(name, value)
    try:
        return replace(RunConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc))
