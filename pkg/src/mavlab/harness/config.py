"""Run configuration: a YAML file plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from mavlab.core import Domain
from mavlab.simlab import SimProfile

__all__ = ["ConfigError", "RunConfig"]


class ConfigError(Exception):
    """The run configuration is missing, malformed, or inconsistent."""


_VALID_POLICIES = ("mav", "cons", "rm", "pass1")
_VALID_BACKENDS = ("simulate", "live", "record", "replay")


@dataclass
class RunConfig:
    """Everything one experiment run needs, resolvable from YAML plus flags.

    Credentials never live here: ``api_key_env`` names an environment
    variable, and only that name is persisted in run snapshots.
    """

    dataset: str
    domain: str = "math"
    dataset_name: str = ""
    generator: str = "sim-generator"
    out_dir: str = "runs/out"
    n: int = 16
    seed: int = 0
    val_size: int = 0
    test_size: int = 0

    backend: str = "simulate"
    record_source: str = "live"
    cassette: str | None = None
    endpoint: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    rate_limit_per_s: float = 4.0
    max_attempts: int = 3
    timeout_s: float = 120.0
    max_in_flight: int = 4

    gen_temperature: float = 1.0
    verify_temperature: float = 0.3
    max_tokens: int = 1024

    pool: Any = "preset"
    subset: Any = "all"
    policies: tuple[str, ...] = ("mav", "cons", "pass1")
    engineer_method: str = "auto"
    rm_provider: str = "stub"
    judge: tuple[str, ...] | None = None
    n_values: tuple[int, ...] | None = None
    template_dir: str | None = None

    sim: SimProfile = field(default_factory=SimProfile)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        for policy in self.policies:
            if policy not in _VALID_POLICIES:
                raise ConfigError(
                    f"unknown policy {policy!r}; valid: {', '.join(_VALID_POLICIES)}"
                )
        if self.backend not in _VALID_BACKENDS:
            raise ConfigError(
                f"unknown backend {self.backend!r}; valid: {', '.join(_VALID_BACKENDS)}"
            )
        if self.backend in ("record", "replay") and not self.cassette:
            raise ConfigError(f"backend {self.backend!r} needs a cassette path")
        if self.backend == "live" and not self.endpoint:
            raise ConfigError("live backend needs an endpoint")
        if self.domain not in [d.value for d in Domain]:
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.val_size < 0 or self.test_size < 0:
            raise ConfigError("split sizes must be non-negative")

    @property
    def domain_kind(self) -> Domain:
        return Domain(self.domain)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "dataset" not in mapping:
            raise ConfigError("config needs a dataset path")
        values = dict(mapping)
        if "policies" in values:
            values["policies"] = tuple(values["policies"])
        if "judge" in values and values["judge"] is not None:
            values["judge"] = tuple(str(part) for part in values["judge"])
        if "n_values" in values and values["n_values"] is not None:
            values["n_values"] = tuple(int(v) for v in values["n_values"])
        if "sim" in values and not isinstance(values["sim"], SimProfile):
            sim_payload = values["sim"] or {}
            try:
                values["sim"] = SimProfile(**sim_payload)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad sim profile: {exc}") from exc
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_yaml(cls, path: str | Path, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        try:
            raw = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        payload = yaml.safe_load(raw) or {}
        if not isinstance(payload, dict):
            raise ConfigError(f"config {path} must be a mapping")
        if overrides:
            payload.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(payload)

    def snapshot(self) -> dict[str, Any]:
        """JSON-friendly copy of the configuration for the run store."""
        payload = dataclasses.asdict(self)
        payload["sim"] = dataclasses.asdict(self.sim)
        payload["policies"] = list(self.policies)
        payload["judge"] = list(self.judge) if self.judge else None
        payload["n_values"] = list(self.n_values) if self.n_values else None
        return payload

    def default_n_values(self) -> tuple[int, ...]:
        if self.n_values:
            return self.n_values
        grid = []
        value = 1
        while value < self.n:
            grid.append(value)
            value *= 2
        grid.append(self.n)
        return tuple(grid)
