"""Configuration objects for the recurrence bound solver."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Type

from dotenv import dotenv_values, load_dotenv
from dotenv.parser import Binding, parse_stream

basedir = Path(__file__).resolve().parent
load_dotenv(basedir.parent / ".env")


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in {"1", "true", "yes", "on"}


class Config:
    """Base configuration shared by all environments.

    Every solver hyperparameter is an UPPER_CASE attribute; the lowercase
    spelling is the key used by config files and CLI flags.
    """

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    SEED: int = int(os.getenv("SOLVER_SEED", "0"))

    NB: int = int(os.getenv("SOLVER_NB", "50000"))
    BB: int = int(os.getenv("SOLVER_BB", "0"))
    BRS: int = int(os.getenv("SOLVER_BRS", "2000"))
    NRS: int = int(os.getenv("SOLVER_NRS", "20000"))
    RETRY_BOUND: int = int(os.getenv("SOLVER_RETRY_BOUND", "15"))
    MAX_EXPANSIONS: int = int(os.getenv("SOLVER_MAX_EXPANSIONS", str(10**7)))
    VALUE_BITS_CAP: int = int(os.getenv("SOLVER_VALUE_BITS_CAP", "4096"))

    BANK: str = os.getenv("SOLVER_BANK", "auto")
    DEGREE: int = int(os.getenv("SOLVER_DEGREE", "2"))
    LAMBDA: float = float(os.getenv("SOLVER_LAMBDA", "10"))
    LASSO_ROUNDS: int = int(os.getenv("SOLVER_LASSO_ROUNDS", "2"))
    SUBSAMPLE: float = float(os.getenv("SOLVER_SUBSAMPLE", "0.5"))
    MAX_ROWS: int = int(os.getenv("SOLVER_MAX_ROWS", "200000"))

    KKT_STEPS: int = int(os.getenv("SOLVER_KKT_STEPS", "100"))
    FEAS_TOL: float = float(os.getenv("SOLVER_FEAS_TOL", "1e-15"))
    ABS_TOL: float = float(os.getenv("SOLVER_ABS_TOL", "1e-10"))
    REL_TOL: float = float(os.getenv("SOLVER_REL_TOL", "1e-9"))

    MAX_DENOMINATOR: int = int(os.getenv("SOLVER_MAX_DENOMINATOR", "100000"))
    RECHECK_POINTS: int = int(os.getenv("SOLVER_RECHECK_POINTS", "2000"))
    FINITE_REGION_CAP: int = int(os.getenv("SOLVER_FINITE_REGION_CAP", "4096"))

    REPAIR: bool = _env_bool("SOLVER_REPAIR", "true")
    REPAIR_BUDGET: int = int(os.getenv("SOLVER_REPAIR_BUDGET", "3"))
    BENCH_WORKERS: int = int(os.getenv("SOLVER_BENCH_WORKERS", "2"))

    CAS_CMD: str = os.getenv("SOLVER_CAS_CMD", "")
    CAS_TIMEOUT_S: float = float(os.getenv("SOLVER_CAS_TIMEOUT_S", "60"))
    CAS_CONCURRENCY: int = int(os.getenv("SOLVER_CAS_CONCURRENCY", "2"))

    @classmethod
    def as_dict(cls) -> Dict[str, Any]:
        """Expose configuration values for debugging and introspection."""

        return {key: getattr(cls, key) for key in dir(cls) if key.isupper()}


class DevelopmentConfig(Config):
    """Configuration suitable for local development."""

    DEBUG = True
    LOG_LEVEL = os.getenv("LOG_LEVEL", "DEBUG")


class ProductionConfig(Config):
    """Configuration tailored for long benchmark runs."""

    DEBUG = False


class QuickConfig(Config):
    """Reduced sample used by acceptance runs."""

    NB = int(os.getenv("SOLVER_NB", "5000"))
    NRS = int(os.getenv("SOLVER_NRS", "2000"))


class TestingConfig(QuickConfig):
    TESTING = True
    NB = 400
    BRS = 200
    NRS = 300
    RECHECK_POINTS = 300
    REPAIR_BUDGET = 2
    BENCH_WORKERS = 1


CONFIG_MAP: Dict[str, Type[Config]] = {
    "development": DevelopmentConfig,
    "production": ProductionConfig,
    "quick": QuickConfig,
    "testing": TestingConfig,
}


def get_config(name: str | None) -> Type[Config]:
    """Retrieve the configuration class matching the supplied name."""

    if not name:
        return DevelopmentConfig
    return CONFIG_MAP.get(name.lower(), DevelopmentConfig)


@dataclass(frozen=True)
class SolverSettings:
    """Picklable snapshot of the effective configuration."""

    seed: int = 0
    nb: int = 50000
    bb: int = 0
    brs: int = 2000
    nrs: int = 20000
    retry_bound: int = 15
    max_expansions: int = 10**7
    value_bits_cap: int = 4096
    bank: str = "auto"
    degree: int = 2
    lambda_: float = 10.0
    lasso_rounds: int = 2
    subsample: float = 0.5
    max_rows: int = 200000
    kkt_steps: int = 100
    feas_tol: float = 1e-15
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_denominator: int = 100000
    recheck_points: int = 2000
    finite_region_cap: int = 4096
    repair: bool = True
    repair_budget: int = 3
    bench_workers: int = 2
    cas_cmd: str = ""
    cas_timeout_s: float = 60.0
    cas_concurrency: int = 2

    def __post_init__(self) -> None:
        if self.nb < 1 or self.nrs < 0 or self.brs < 0:
            raise ValueError("Sample sizes must be nonnegative and nb positive.")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1].")
        if self.lambda_ < 0:
            raise ValueError("lambda must be nonnegative.")
        if self.max_denominator < 1:
            raise ValueError("max_denominator must be at least 1.")
        if self.bank not in {"auto", "poly2", "poly2+log", "fastgrow"}:
            raise ValueError(f"Unknown bank profile {self.bank!r}.")
        if self.repair_budget < 0 or self.bench_workers < 1:
            raise ValueError("repair_budget must be nonnegative and bench_workers positive.")

    @staticmethod
    def key_for(name: str) -> str:
        return "lambda_" if name == "lambda" else name

    @classmethod
    def from_config(cls, config: Type[Config] | Mapping[str, Any]) -> SolverSettings:
        values = config if isinstance(config, Mapping) else config.as_dict()
        known = {f.name for f in fields(cls)}
        picked = {}
        for key, value in values.items():
            name = cls.key_for(key.lower())
            if name in known:
                picked[name] = value
        return cls(**picked)

    def with_overrides(self, overrides: Mapping[str, Any]) -> SolverSettings:
        """Apply lowercase overrides, ignoring ``None`` values."""

        known = {f.name: f for f in fields(self)}
        changes: dict[str, Any] = {}
        for key, value in overrides.items():
            if value is None:
                continue
            name = self.key_for(key)
            if name not in known:
                raise ValueError(f"Unknown setting {key!r}.")
            changes[name] = _coerce(key, value, type(getattr(self, name)))
        return replace(self, **changes)

    def as_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["lambda"] = data.pop("lambda_")
        return data


def _coerce(key: str, value: Any, kind: type) -> Any:
    if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered not in {"1", "0", "true", "false", "yes", "no", "on", "off"}:
                raise ValueError(text)
            return lowered in {"1", "true", "yes", "on"}
        if kind is int:
            number = float(text)
            if not number.is_integer():
                raise ValueError(text)
            return int(number)
        if kind is float:
            return float(text)
    except ValueError as exc:
        raise ValueError(f"Setting {key!r} expects a {kind.__name__}, got {value!r}.") from exc
    return text


def _line_of(binding: Binding) -> int:
    text = binding.original.string
    return binding.original.line + text[: len(text) - len(text.lstrip())].count("\n")


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a flat ``key = value`` file in dotenv syntax; ``#`` starts a comment."""

    defaults = SolverSettings()
    known = {f.name for f in fields(SolverSettings)}
    with open(path, encoding="utf-8") as stream:
        for binding in parse_stream(stream):
            if binding.key is None and not binding.error:
                continue
            if binding.error or binding.value is None:
                raise ValueError(f"{path}:{_line_of(binding)}: expected 'key = value'.")
            if SolverSettings.key_for(binding.key.lower()) not in known:
                raise ValueError(f"{path}:{_line_of(binding)}: unknown key {binding.key.lower()!r}.")

    values: dict[str, Any] = {}
    for key, value in dotenv_values(path, interpolate=False, encoding="utf-8").items():
        key = key.lower()
        name = SolverSettings.key_for(key)
        values[key] = _coerce(key, (value or "").strip(), type(getattr(defaults, name)))
    return values


def resolve_settings(
    config: Type[Config] | Mapping[str, Any] | None = None,
    config_file: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> SolverSettings:
    """Class defaults and environment, then the config file, then explicit overrides."""

    settings = SolverSettings.from_config(config or get_config(os.getenv("FLASK_ENV")))
    if config_file is not None:
        settings = settings.with_overrides(load_config_file(config_file))
    if overrides:
        settings = settings.with_overrides(overrides)
    return settings
