"""Pipeline configuration: one YAML file shared by every CLI stage."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .jsonl import dumps, text_digest
from .llm import ChatBackend, HttpChatBackend, MockChatBackend, RetryPolicy


@dataclass
class PipelineConfig:
    paths: dict[str, str] = field(default_factory=dict)
    backend: dict[str, Any] = field(default_factory=lambda: {"type": "mock"})
    k: int = 100
    standard_order: list[str] | None = None
    m: int = 3
    top_n_select: int = 10_000
    count_unit: str = "pairs"
    retrieval: dict[str, Any] = field(
        default_factory=lambda: {"max_chunk_tokens": 256, "top_n": 3}
    )
    seeds: dict[str, int] = field(default_factory=lambda: {"cqsa": 0, "baseline": 0})
    base_model_id: str = "base-lm"
    beta: float = 0.1
    default_cluster: str | None = None

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        cfg = cls()
        for key, value in doc.items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(getattr(cfg, key), dict) and isinstance(value, dict):
                getattr(cfg, key).update(value)
            else:
                setattr(cfg, key, value)
        return cfg

    def path(self, name: str, default: str | None = None) -> str:
        value = self.paths.get(name, default)
        if value is None:
            raise ConfigError(f"config paths.{name} is required for this stage")
        return value

    def digest(self) -> str:
        return text_digest(
            dumps(
                {
                    "paths": self.paths,
                    "backend": self.backend,
                    "k": self.k,
                    "standard_order": self.standard_order,
                    "m": self.m,
                    "top_n_select": self.top_n_select,
                    "count_unit": self.count_unit,
                    "retrieval": self.retrieval,
                    "seeds": self.seeds,
                    "base_model_id": self.base_model_id,
                    "beta": self.beta,
                    "default_cluster": self.default_cluster,
                }
            )
        )

    def make_backend(self) -> ChatBackend:
        kind = self.backend.get("type", "mock")
        if kind == "mock":
            rules = [
                (rule["contains"], rule["respond"])
                for rule in self.backend.get("rules", [])
            ]
            return MockChatBackend(
                script=self.backend.get("script", {}),
                rules=rules,
                default=self.backend.get("default", "ok"),
            )
        if kind == "http":
            return HttpChatBackend(
                endpoint=self.backend["endpoint"],
                auth_token=self.backend.get("auth_token"),
                deadline_s=float(self.backend.get("deadline_s", 30.0)),
                retry=RetryPolicy(
                    max_attempts=int(self.backend.get("max_attempts", 3)),
                    base_delay_s=float(self.backend.get("base_delay_s", 0.25)),
                ),
            )
        raise ConfigError(f"unknown backend type {kind!r}")
