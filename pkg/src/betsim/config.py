"""Scenario files.

A scenario is a YAML mapping with a mandatory ``version`` key::

    version: 1
    races: 100
    seed: 7
    commission_rate: 0.05
    price_improvement: true
    race: {track_length: 200, n_competitors: 5}
    population:
      - {strategy: ZI, count: 10}
      - {strategy: RP, count: 5, params: {n: 1, dmin: 10, dmax: 15}}
      - {strategy: MODEL, count: 5, params: {threshold: 0.1}}

Unknown keys anywhere are rejected.  Bettor ids are assigned in
population order starting at 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .agents import STRATEGIES, BettorSpec
from .errors import ConfigError
from .race_sim import RaceConfig

SCHEMA_VERSION = 1
_TOP_KEYS = {"version", "races", "seed", "commission_rate", "price_improvement", "race", "population", "outputs"}
_ENTRY_KEYS = {"strategy", "count", "params", "stake"}


@dataclass(frozen=True)
class PopulationEntry:
    strategy: str
    count: int
    params: dict = field(default_factory=dict)
    stake: float = 10.0


@dataclass(frozen=True)
class ScenarioConfig:
    races: int
    seed: int
    race: RaceConfig
    population: tuple[PopulationEntry, ...]
    commission_rate: float = 0.05
    price_improvement: bool = True
    outputs: dict = field(default_factory=dict)

    def bettors(self) -> list[BettorSpec]:
        specs = []
        for entry in self.population:
            for _ in range(entry.count):
                specs.append(BettorSpec(len(specs), entry.strategy, dict(entry.params), entry.stake))
        return specs

    @property
    def needs_model(self) -> bool:
        return any(e.strategy == "MODEL" and e.count > 0 for e in self.population)

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "races": self.races,
            "seed": self.seed,
            "commission_rate": self.commission_rate,
            "price_improvement": self.price_improvement,
            "race": self.race.to_dict(),
            "population": [
                {"strategy": e.strategy, "count": e.count, "params": dict(e.params), "stake": e.stake}
                for e in self.population
            ],
        }


def _require(data: dict, key: str, kind, where: str = "") -> Any:
    name = f"{where}{key}"
    if key not in data:
        raise ConfigError(name, "missing")
    value = data[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ConfigError(name, f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def parse_scenario(data: Any) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "scenario must be a mapping")
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown key")
    version = _require(data, "version", int)
    if version != SCHEMA_VERSION:
        raise ConfigError("version", f"unsupported schema version {version}")
    races = _require(data, "races", int)
    if races < 0:
        raise ConfigError("races", "must be >= 0")
    seed = _require(data, "seed", int)
    rate = float(data.get("commission_rate", 0.05))
    if not 0 <= rate < 1:
        raise ConfigError("commission_rate", "must lie in [0, 1)")
    price_improvement = data.get("price_improvement", True)
    if not isinstance(price_improvement, bool):
        raise ConfigError("price_improvement", "expected a boolean")
    race_data = data.get("race", {}) or {}
    if not isinstance(race_data, dict):
        raise ConfigError("race", "expected a mapping")
    race = RaceConfig.from_dict(race_data)

    raw_pop = _require(data, "population", list)
    population = []
    for i, entry in enumerate(raw_pop):
        where = f"population[{i}]."
        if not isinstance(entry, dict):
            raise ConfigError(f"population[{i}]", "expected a mapping")
        for key in entry:
            if key not in _ENTRY_KEYS:
                raise ConfigError(f"{where}{key}", "unknown key")
        strategy = _require(entry, "strategy", str, where)
        if strategy not in STRATEGIES:
            raise ConfigError(f"{where}strategy", f"unknown strategy {strategy!r}")
        count = _require(entry, "count", int, where)
        if count < 0:
            raise ConfigError(f"{where}count", "must be >= 0")
        params = entry.get("params", {}) or {}
        if not isinstance(params, dict):
            raise ConfigError(f"{where}params", "expected a mapping")
        stake = float(entry.get("stake", 10.0))
        try:
            BettorSpec(0, strategy, dict(params), stake)
        except ConfigError as exc:
            raise ConfigError(f"{where}{exc.field}", str(exc).split(": ", 1)[-1]) from None
        population.append(PopulationEntry(strategy, count, dict(params), stake))
    if sum(e.count for e in population) < 2:
        raise ConfigError("population", "need at least 2 bettors in total")
    outputs = data.get("outputs", {}) or {}
    if not isinstance(outputs, dict):
        raise ConfigError("outputs", "expected a mapping")
    return ScenarioConfig(races, seed, race, tuple(population), rate, price_improvement, dict(outputs))


def load_scenario(path: str | Path, races: Optional[int] = None, seed: Optional[int] = None) -> ScenarioConfig:
    """Read and validate a scenario file; ``races``/``seed`` override the file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    scenario = parse_scenario(data)
    if races is not None or seed is not None:
        scenario = ScenarioConfig(
            races if races is not None else scenario.races,
            seed if seed is not None else scenario.seed,
            scenario.race, scenario.population, scenario.commission_rate,
            scenario.price_improvement, scenario.outputs,
        )
    return scenario
