"""
Run configuration: defaults < config file < command-line flags.

Config files are TOML (keys equal RunConfig field names) or a JSON run
manifest, whose "config" object is read back so a run can be repeated.
"""
import json
import logging
import os
import tomllib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .constants import Calendar, Defaults, Env, Level, Treatment
from .errors import ConfigError
from .synth import GeneratorSpec

logger = logging.getLogger(__name__)


# ============================================================================
# VALUE PARSERS
# ============================================================================
def parse_week_range(value):
    """
    "a..b" (inclusive) or a two-element sequence -> (a, b).

    Raises:
        ConfigError: malformed range, or bounds outside 1..52 or reversed
    """
    if isinstance(value, str):
        parts = value.split("..")
        if len(parts) != 2:
            raise ConfigError(f"week range must look like 'a..b', got '{value}'")
        try:
            low, high = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ConfigError(f"week range must hold integers, got '{value}'") from exc
    else:
        try:
            low, high = (int(v) for v in value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"week range must be 'a..b' or [a, b], got {value!r}") from exc
    if not 1 <= low <= high <= Calendar.CONTRACT_WEEKS:
        raise ConfigError(f"week range {low}..{high} outside 1..{Calendar.CONTRACT_WEEKS}")
    return low, high


def format_week_range(bounds):
    return f"{bounds[0]}..{bounds[1]}"


def parse_band(value):
    """ "14-20" -> (14, 20); "49+" -> (49, None)."""
    if isinstance(value, (list, tuple)):
        low, high = value
        return int(low), None if high is None else int(high)
    text = str(value).strip()
    try:
        if text.endswith("+"):
            return int(text[:-1]), None
        low, high = text.split("-")
        low, high = int(low), int(high)
    except ValueError as exc:
        raise ConfigError(f"band must look like '14-20' or '49+', got '{value}'") from exc
    if low > high:
        raise ConfigError(f"band '{value}' is reversed")
    return low, high


def format_band(band):
    low, high = band
    return f"{low}+" if high is None else f"{low}-{high}"


def _as_tuple(value):
    if isinstance(value, str):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    return tuple(value)


# ============================================================================
# RUN CONFIG
# ============================================================================
@dataclass(frozen=True)
class RunConfig:
    """Every value a subcommand can be told; each field has a default."""

    in_dir: str = "."
    out_dir: str = "."
    seed: int = Defaults.SEED
    n_members: int = Defaults.N_MEMBERS
    preset: str = Defaults.PRESET

    # Clustering
    k: int = Defaults.K
    window: int = Defaults.WINDOW
    late_window: int = Defaults.LATE_WINDOW
    refit: bool = False
    normalize: bool = False
    max_iters: int = Defaults.NMF_MAX_ITERS
    tol: float = Defaults.NMF_TOL
    restarts: int = Defaults.NMF_RESTARTS

    # Survival and demographics
    gap_tolerance: int = Defaults.GAP_TOLERANCE
    survival_bins: tuple = Defaults.SURVIVAL_BINS
    age_bands: tuple = Defaults.AGE_BANDS

    # None selects the subcommand's own range
    weeks: tuple | None = None

    # Causal
    treatments: tuple = Treatment.INTERVENTIONS
    levels: tuple = Level.POSITIVE
    refute: int = Defaults.REFUTE_DRAWS
    bootstrap: int = Defaults.BOOTSTRAP_RESAMPLES
    ridge: float = Defaults.RIDGE
    caliper: float | None = None
    cluster_encoding: str = Defaults.CLUSTER_ENCODING
    by_cluster: bool = True
    self_reported: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ("n_members", "k", "window", "late_window", "max_iters", "restarts",
                    "bootstrap")
        for name in positive:
            minimum = 0 if name == "n_members" else 1
            if getattr(self, name) < minimum:
                raise ConfigError(f"{name} must be >= {minimum}")
        if self.refute < 0:
            raise ConfigError("refute must be >= 0")
        if not 0 <= self.gap_tolerance < Calendar.CONTRACT_WEEKS:
            raise ConfigError(f"gap_tolerance must be within 0..{Calendar.CONTRACT_WEEKS - 1}")
        if self.ridge < 0:
            raise ConfigError("ridge must be >= 0")
        if self.caliper is not None and self.caliper <= 0:
            raise ConfigError("caliper must be positive")
        if self.preset not in GeneratorSpec.PRESETS:
            raise ConfigError(f"unknown preset '{self.preset}', expected one of {GeneratorSpec.PRESETS}")
        if self.cluster_encoding not in Defaults.CLUSTER_ENCODINGS:
            raise ConfigError(f"cluster_encoding must be one of {Defaults.CLUSTER_ENCODINGS}")
        for treatment in self.treatments:
            if treatment not in Treatment.INTERVENTIONS:
                raise ConfigError(f"unknown treatment '{treatment}'")
        for level in self.levels:
            if level not in Level.POSITIVE:
                raise ConfigError(f"level must be one of {Level.POSITIVE}, got '{level}'")

    def week_range(self, default):
        """Inclusive range of the configured weeks, or of the default bounds."""
        low, high = self.weeks if self.weeks is not None else default
        return range(low, high + 1)

    @classmethod
    def field_names(cls):
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_mapping(cls, mapping, base=None):
        """
        Overlay a mapping of field values (as found in config files) on a base config.

        Raises:
            ConfigError: unknown keys or malformed values
        """
        base = base or cls()
        unknown = set(mapping) - set(cls.field_names())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = {}
        for name, value in mapping.items():
            if value is None and name not in ("weeks", "caliper"):
                continue
            values[name] = _coerce(name, value)
        try:
            return replace(base, **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        """JSON-ready form that from_mapping reads back."""
        data = {name: getattr(self, name) for name in self.field_names()}
        data["weeks"] = None if self.weeks is None else format_week_range(self.weeks)
        data["survival_bins"] = [format_band(b) for b in self.survival_bins]
        data["age_bands"] = [format_band(b) for b in self.age_bands]
        data["treatments"] = list(self.treatments)
        data["levels"] = list(self.levels)
        return data


def _coerce(name, value):
    try:
        if name == "weeks":
            return None if value is None else parse_week_range(value)
        if name in ("survival_bins", "age_bands"):
            return tuple(parse_band(v) for v in _as_tuple(value))
        if name in ("treatments", "levels"):
            return _as_tuple(value)
        if name in ("refit", "normalize", "by_cluster", "self_reported"):
            if not isinstance(value, bool):
                raise ConfigError(f"{name} must be true or false")
            return value
        if name in ("tol", "ridge"):
            return float(value)
        if name == "caliper":
            return None if value is None else float(value)
        if name in ("in_dir", "out_dir", "preset", "cluster_encoding"):
            return str(value)
        return int(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {name}: {value!r}") from exc


# ============================================================================
# RESOLUTION
# ============================================================================
def load_config_file(path):
    """
    Read a TOML config or a JSON run manifest into a field mapping.

    Raises:
        ConfigError: unreadable file or unsupported format
    """
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as handle:
                return tomllib.load(handle)
        if path.suffix == ".json":
            with open(path, encoding="utf-8") as handle:
                data = json.load(handle)
            return data.get("config", data)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    raise ConfigError(f"config file must be .toml or .json, got {path.name}")


def resolve_config(flags=None, config_path=None, environ=None):
    """
    Build the effective RunConfig.

    Args:
        flags: Field values given on the command line (None = not given)
        config_path: Optional TOML/JSON config file
        environ: Environment mapping (default os.environ)

    The seed falls back to HABITFORGE_SEED when neither flags nor file set it.
    """
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    environ = os.environ if environ is None else environ
    file_values = load_config_file(config_path) if config_path else {}
    config = RunConfig.from_mapping(file_values)
    if "seed" not in flags and file_values.get("seed") is None and Env.SEED in environ:
        try:
            config = replace(config, seed=int(environ[Env.SEED]))
        except ValueError as exc:
            raise ConfigError(f"{Env.SEED} must be an integer, got '{environ[Env.SEED]}'") from exc
    config = RunConfig.from_mapping(flags, base=config)
    logger.debug("Resolved config: %s", config)
    return config
