"""Experiment configuration stored as YAML.

A config file is a flat mapping of the keys in `ExperimentConfig`; unknown
keys are rejected so typos fail loudly.  ``dump`` followed by ``load``
returns an equal object.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .lattice import ContractError

COMMANDS = ("simulate", "theta", "eq2", "eqstr", "corollary2", "prop3", "edgespeed", "prop4f",
            "duality", "oracle", "selftest")


class ConfigError(ContractError):
    """Malformed configuration; the message names the offending key."""


@dataclass
class ExperimentConfig:
    command: str | None = None
    epsilon: float | None = None
    p: float | None = None
    p_prime: float | None = None
    k: int | None = None
    n: int | None = None
    beta: float | None = None
    rho: float | None = None
    a_list: list[float] | None = None
    n_list: list[int] | None = None
    k_list: list[int] | None = None
    eps_list: list[float] | None = None
    values: list[float] | None = None
    sizes: list[int] | None = None
    size_n: int | None = None
    trials: int | None = None
    n_trunc: int | None = None
    kernel: str | None = None
    convention: str | None = None
    initial: str | None = None
    subset: str | None = None
    mode: str | None = None
    pc_estimate: float | None = None
    permutations: int | None = None
    seed: int | None = None
    workers: int | None = None
    csv: str | None = None
    json: str | None = None

    def __post_init__(self):
        if self.command is not None and self.command not in COMMANDS:
            raise ConfigError(f"command: unknown subcommand {self.command!r}")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping of keys to values")
        known = set(cls.keys())
        for key in data:
            if key not in known:
                raise ConfigError(f"{key}: unknown config key")
        return cls(**{k.replace("-", "_"): v for k, v in data.items()})

    def to_dict(self, drop_none: bool = True) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None} if drop_none else d

    def merged(self, other: dict) -> "ExperimentConfig":
        """Copy with the non-None entries of ``other`` applied on top."""
        d = self.to_dict(drop_none=False)
        d.update({k: v for k, v in other.items() if v is not None})
        return ExperimentConfig.from_dict(d)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
        return cls.from_dict(data or {})

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
