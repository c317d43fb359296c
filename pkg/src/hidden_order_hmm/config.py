"""
Configuration

pydantic models for every configurable stage, plus the environment-backed
defaults read through python-dotenv. Precedence when a run is resolved:
CLI flag > --config JSON file > environment > built-in default.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Type, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

ENV_PREFIX = "HIDDEN_ORDER_"


class FitConfig(BaseModel):
    """EM settings shared by the HMM and HSMM fits"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iterations: int = Field(500, ge=1)
    tolerance: float = Field(1e-6, gt=0)
    restarts: int = Field(10, ge=1)
    seed: int = 0
    num_symbols: int = Field(2, ge=1)
    probability_floor: float = Field(1e-12, ge=0, lt=1e-3)
    # HSMM only: abort with the best partial result once exceeded
    time_budget_seconds: Optional[float] = Field(None, gt=0)


class SchemaConfig(BaseModel):
    """Column names and validation policy for transaction CSV files"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    timestamp: str = "timestamp"
    member_id: str = "member_id"
    sign: str = "sign"
    shares: str = "shares"
    price: str = "price"
    bid: str = "bid"
    ask: str = "ask"
    timezone: str = "UTC"
    max_malformed_fraction: float = Field(0.001, ge=0, le=1)
    # one record per member side: matched trades between two listed members
    # appear twice and are counted once in market volume
    both_sides_feed: bool = False


class InputPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    transactions: Path
    calendar: Path
    segments: Optional[Path] = None

    @model_validator(mode="after")
    def _paths_exist(self) -> "InputPaths":
        for name in ("transactions", "calendar", "segments"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ValueError(f"{name} path does not exist: {path}")
        return self


class MemberFilter(BaseModel):
    """Activity thresholds a member must meet in every period"""

    model_config = ConfigDict(extra="forbid")

    min_transactions: int = Field(1000, ge=0)
    min_active_days: int = Field(200, ge=0)


class ModelSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_states: int = Field(3, ge=1)
    restarts: int = Field(10, ge=1)
    tolerance: float = Field(1e-6, gt=0)
    max_iterations: int = Field(500, ge=1)
    decoder: Literal["posterior", "viterbi"] = "posterior"
    use_hsmm: bool = False
    max_sojourn: int = Field(200, ge=2)
    hsmm_restarts: int = Field(2, ge=1)
    hsmm_time_budget_seconds: Optional[float] = Field(None, gt=0)

    def fit_config(self, seed: int) -> FitConfig:
        return FitConfig(
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            restarts=self.restarts,
            seed=seed,
        )

    def hsmm_fit_config(self, seed: int) -> FitConfig:
        return FitConfig(
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            restarts=self.hsmm_restarts,
            seed=seed,
            time_budget_seconds=self.hsmm_time_budget_seconds,
        )


class StatsSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hill_quantile: float = Field(0.05, gt=0, lt=1)
    num_bins: int = Field(20, ge=1)
    windowing: Literal["monthly"] = "monthly"
    n_min: int = Field(10, ge=0)


class RunConfig(BaseModel):
    """Everything a pipeline run depends on"""

    model_config = ConfigDict(extra="forbid")

    inputs: InputPaths
    tape_schema: SchemaConfig = Field(default_factory=SchemaConfig)
    member_filter: MemberFilter = Field(default_factory=MemberFilter)
    model: ModelSettings = Field(default_factory=ModelSettings)
    stats: StatsSettings = Field(default_factory=StatsSettings)
    seed: int = 0
    output_dir: Path = Path("runs")
    run_id: Optional[str] = None
    workers: int = Field(1, ge=1)
    single_period: bool = False

    @field_validator("run_id")
    @classmethod
    def _safe_run_id(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and (not value or "/" in value or value.startswith(".")):
            raise ValueError(f"run_id must be a plain directory name: {value!r}")
        return value

    def canonical_json(self) -> str:
        """Sorted-key compact JSON used for hashing (output location excluded)"""
        payload = self.model_dump(mode="json", exclude={"output_dir", "run_id"})
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def resolved_run_id(self) -> str:
        return self.run_id or f"run-{self.config_hash()[:12]}"

    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.resolved_run_id()


def task_seed(seed: int, member_id: str, period: Optional[int] = None) -> int:
    """Seed of one member-period fit, stable across runs and worker counts"""
    key = f"{seed}:{member_id}:{'all' if period is None else period}"
    return int(hashlib.sha256(key.encode("utf-8")).hexdigest()[:8], 16)


def env_defaults() -> Dict[str, Any]:
    """Run-level defaults taken from the environment (and a .env file)"""
    load_dotenv()
    defaults: Dict[str, Any] = {}
    if os.environ.get(f"{ENV_PREFIX}SEED"):
        defaults["seed"] = int(os.environ[f"{ENV_PREFIX}SEED"])
    if os.environ.get(f"{ENV_PREFIX}OUTPUT_DIR"):
        defaults["output_dir"] = os.environ[f"{ENV_PREFIX}OUTPUT_DIR"]
    if os.environ.get(f"{ENV_PREFIX}WORKERS"):
        defaults["workers"] = int(os.environ[f"{ENV_PREFIX}WORKERS"])
    return defaults


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config_file(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return data


def resolve_run_config(
    overrides: Optional[Dict[str, Any]] = None,
    config_path: Optional[Path] = None,
) -> RunConfig:
    """Merge env defaults, a JSON config file and flag overrides into a RunConfig

    Args:
        overrides: Nested dict of values given on the command line (None values dropped)
        config_path: Optional JSON config file

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: on any validation failure
    """
    merged = _deep_merge(env_defaults(), load_config_file(config_path))
    merged = _deep_merge(merged, _drop_none(overrides or {}))
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}") from e


def _drop_none(values: Dict[str, Any]) -> Dict[str, Any]:
    cleaned: Dict[str, Any] = {}
    for key, value in values.items():
        if isinstance(value, dict):
            nested = _drop_none(value)
            if nested:
                cleaned[key] = nested
        elif value is not None:
            cleaned[key] = value
    return cleaned


SettingsT = TypeVar("SettingsT", bound=BaseModel)


def resolve_settings(
    model_cls: Type[SettingsT],
    config_path: Optional[Path],
    section: str,
    overrides: Optional[Dict[str, Any]] = None,
) -> SettingsT:
    """One section of a --config file with flag overrides applied

    Used by the single-stage subcommands so they read the same settings the
    pipeline would.

    Raises:
        ConfigError: on any validation failure
    """
    values = load_config_file(config_path).get(section, {})
    if not isinstance(values, dict):
        raise ConfigError(f"Config section {section!r} must be a JSON object")
    try:
        return model_cls.model_validate(_deep_merge(values, _drop_none(overrides or {})))
    except ValidationError as e:
        raise ConfigError(f"Invalid {section} settings: {e}") from e


def resolve_seed(flag: Optional[int], config_path: Optional[Path]) -> int:
    """Seed with the usual precedence: flag > config file > environment > 0"""
    if flag is not None:
        return flag
    file_seed = load_config_file(config_path).get("seed")
    if file_seed is not None:
        return int(file_seed)
    return int(env_defaults().get("seed", 0))
