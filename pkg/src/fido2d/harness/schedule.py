"""Schedules and their deterministic execution."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..devices import UserMode
from ..server import ServerConfig
from .world import ProtocolConfig, ScheduleError, World, validate_schedule


@dataclass(frozen=True)
class Bounds:
    max_steps: int = 200
    max_accounts: int = 3
    max_transactions: int = 5


@dataclass
class Schedule:
    seed: int
    steps: list = field(default_factory=list)
    bounds: Bounds = field(default_factory=Bounds)
    config: ProtocolConfig = field(default_factory=ProtocolConfig)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "user_mode": self.config.user_mode.value,
            "check_echo": self.config.check_echo,
            "server": vars(self.config.server),
            "bounds": vars(self.bounds),
            "steps": self.steps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def digest(self) -> str:
        """SHA-256 over the compact sorted-key JSON form."""
        compact = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(compact.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict, seed: Optional[int] = None) -> "Schedule":
        try:
            config = ProtocolConfig(
                user_mode=UserMode(data.get("user_mode", "compare")),
                server=ServerConfig(**data.get("server", {})),
                check_echo=data.get("check_echo", True),
            )
            bounds = Bounds(**data.get("bounds", {}))
            steps = [list(s) for s in data.get("steps", [])]
            return cls(seed if seed is not None else int(data.get("seed", 0)), steps, bounds, config)
        except (TypeError, ValueError) as exc:
            raise ScheduleError(f"bad scenario: {exc}") from None

    @classmethod
    def load(cls, path: str | Path, seed: Optional[int] = None) -> "Schedule":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ScheduleError(f"{path}: {exc}") from None
        return cls.from_dict(data, seed)


def run(schedule: Schedule) -> World:
    """Execute a schedule from a fresh world; the result is a pure function of it."""
    validate_schedule(schedule.steps)
    if len(schedule.steps) > schedule.bounds.max_steps:
        raise ScheduleError(f"schedule has {len(schedule.steps)} steps, bound is {schedule.bounds.max_steps}")
    world = World(schedule.seed, schedule.config)
    for action in schedule.steps:
        world.apply(action)
    return world
