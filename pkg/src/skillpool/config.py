"""TOML run configuration with strict key checking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .agents.base import Budgets
from .engine import ConfigError, RunConfig
from .execution import Limits, MatchPolicy


@dataclass(frozen=True)
class SimSettings:
    noise: float = 0.0
    seed: Optional[int] = None


@dataclass(frozen=True)
class LLMSettings:
    endpoint: str = ""
    model: str = ""
    timeout_s: float = 300.0
    retries: int = 3
    reflection_temperature: float = 1.0
    judge_temperature: float = 0.2


@dataclass(frozen=True)
class CliConfig:
    run: Optional[RunConfig] = None
    budgets: Budgets = field(default_factory=Budgets)
    match: MatchPolicy = field(default_factory=MatchPolicy)
    limits: Limits = field(default_factory=Limits)
    sim: SimSettings = field(default_factory=SimSettings)
    llm: LLMSettings = field(default_factory=LLMSettings)
    pool: Optional[str] = None
    base_dir: Path = Path(".")
    explicit_seeds: frozenset[str] = frozenset()

    def require_seeds(self, names: tuple[str, ...] = ("run.rng_seed", "sim.seed")) -> None:
        """Synthetic runs must pin their seeds explicitly."""
        missing = set(names) - self.explicit_seeds
        if missing:
            raise ConfigError(f"synthetic runs need explicit seeds: {', '.join(sorted(missing))}")

    def pool_path(self) -> Optional[Path]:
        if self.pool is None:
            return None
        p = Path(self.pool)
        return p if p.is_absolute() else self.base_dir / p

    def to_json(self) -> dict:
        def plain(obj) -> dict:
            return {f.name: getattr(obj, f.name) for f in fields(obj)}

        return {
            "run": self.run.to_json() if self.run else None,
            "budgets": plain(self.budgets),
            "match": plain(self.match),
            "limits": plain(self.limits),
            "sim": plain(self.sim),
            "llm": plain(self.llm),
            "pool": self.pool,
        }


_SECTIONS = {
    "run": RunConfig,
    "budgets": Budgets,
    "match": MatchPolicy,
    "limits": Limits,
    "sim": SimSettings,
    "llm": LLMSettings,
}


def _build(name: str, cls, values: Mapping[str, Any]):
    if not isinstance(values, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    allowed = {f.name for f in fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _merge(base: dict, override: Mapping) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_mapping(data: Mapping, base_dir: Path = Path(".")) -> CliConfig:
    unknown = set(data) - set(_SECTIONS) - {"pool"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    built = {name: _build(name, cls, data[name]) for name, cls in _SECTIONS.items() if name in data}
    seeds = set()
    if "rng_seed" in data.get("run", {}):
        seeds.add("run.rng_seed")
    if data.get("sim", {}).get("seed") is not None:
        seeds.add("sim.seed")
    return CliConfig(pool=data.get("pool"), base_dir=base_dir, explicit_seeds=frozenset(seeds), **built)


def load_config(path: Optional[str | Path], override: Optional[str] = None) -> CliConfig:
    """Read a TOML config; ``override`` is a JSON object merged over it."""
    data: dict = {}
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base_dir = path.parent
    if override:
        try:
            extra = json.loads(override)
        except ValueError as exc:
            raise ConfigError(f"override is not valid JSON: {exc}") from exc
        if not isinstance(extra, dict):
            raise ConfigError("override must be a JSON object")
        data = _merge(data, extra)
    return config_from_mapping(data, base_dir)
