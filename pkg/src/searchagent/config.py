"""Layered run configuration: flags > environment > config file > defaults.

The effective configuration of every run is archived next to its outputs;
credentials are referenced by environment-variable *name* only and never
written anywhere.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .types import AgentConfig

ENV_PREFIX = "SEARCHAGENT_"

#: environment variable (without prefix) -> (section, key, type)
_ENV_MAP: dict[str, tuple[str | None, str, type]] = {
    "RUN_SEED": (None, "run_seed", int),
    "PARALLELISM": (None, "parallelism", int),
    "GENERATION": (None, "generation", int),
    "TEMPLATES_DIR": (None, "templates_dir", str),
    "TEMPERATURE": ("agent", "temperature", float),
    "SAMPLES_PER_STEP": ("agent", "samples_per_step", int),
    "TOP_K_SNIPPETS": ("agent", "top_k_snippets", int),
    "MAX_SEARCHES": ("agent", "max_searches", int),
    "MAX_PARSE_RETRIES": ("agent", "max_parse_retries", int),
    "BACKEND_MODE": ("backend", "mode", str),
    "LLM_ENDPOINT": ("backend", "llm_endpoint", str),
    "LLM_MODEL": ("backend", "llm_model", str),
    "SEARCH_ENDPOINT": ("backend", "search_endpoint", str),
    "FIXTURES_DIR": ("backend", "fixtures_dir", str),
    "SIMULATED_SEED": ("backend", "simulated_seed", int),
}

BACKEND_MODES = ("simulated", "fixtures", "http")


@dataclass
class BackendConfig:
    mode: str = "simulated"
    llm_endpoint: str = ""
    llm_model: str = "default"
    llm_api_key_env: str = "SEARCHAGENT_LLM_API_KEY"
    search_endpoint: str = ""
    search_api_key_env: str = "SEARCHAGENT_SEARCH_API_KEY"
    fixtures_dir: str = ""
    simulated_seed: int = 0
    llm_rate_per_sec: float = 0.0  # 0 disables client-side rate limiting
    search_rate_per_sec: float = 0.0
    record_dir: str = ""

    def validate(self) -> None:
        if self.mode not in BACKEND_MODES:
            raise ConfigError(f"backend mode {self.mode!r} not in {BACKEND_MODES}")
        if self.mode == "http" and not self.llm_endpoint:
            raise ConfigError("http backend mode requires backend.llm_endpoint")
        if self.mode == "http" and not self.search_endpoint:
            raise ConfigError("http backend mode requires backend.search_endpoint")
        if self.mode == "fixtures" and not self.fixtures_dir:
            raise ConfigError("fixtures backend mode requires backend.fixtures_dir")


@dataclass
class RunConfig:
    agent: AgentConfig = field(default_factory=AgentConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    run_seed: int = 0
    parallelism: int = 1
    generation: int = 0
    templates_dir: str = ""
    loop_endpoints: list[str] = field(default_factory=list)

    def validate(self) -> None:
        self.agent.validate()
        self.backend.validate()
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent": self.agent.to_dict(),
            "backend": {
                "mode": self.backend.mode,
                "llm_endpoint": self.backend.llm_endpoint,
                "llm_model": self.backend.llm_model,
                "llm_api_key_env": self.backend.llm_api_key_env,
                "search_endpoint": self.backend.search_endpoint,
                "search_api_key_env": self.backend.search_api_key_env,
                "fixtures_dir": self.backend.fixtures_dir,
                "simulated_seed": self.backend.simulated_seed,
                "llm_rate_per_sec": self.backend.llm_rate_per_sec,
                "search_rate_per_sec": self.backend.search_rate_per_sec,
                "record_dir": self.backend.record_dir,
            },
            "run_seed": self.run_seed,
            "parallelism": self.parallelism,
            "generation": self.generation,
            "templates_dir": self.templates_dir,
            "loop_endpoints": list(self.loop_endpoints),
        }


def _apply(data: dict[str, Any], cfg: RunConfig) -> None:
    agent = dict(data.get("agent", {}))
    if agent:
        cfg.agent = AgentConfig.from_dict({**cfg.agent.to_dict(), **agent})
    backend = data.get("backend", {})
    for key, value in backend.items():
        if not hasattr(cfg.backend, key):
            raise ConfigError(f"unknown backend config key {key!r}")
        setattr(cfg.backend, key, value)
    for key in ("run_seed", "parallelism", "generation", "templates_dir"):
        if key in data:
            setattr(cfg, key, data[key])
    loop = data.get("loop", {})
    if "endpoints" in loop:
        cfg.loop_endpoints = list(loop["endpoints"])


def load_run_config(
    config_file: Path | str | None = None,
    env: Mapping[str, str] | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Build the effective config. ``overrides`` uses the file's nested shape
    and wins over environment variables, which win over the file."""
    cfg = RunConfig()
    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
        _apply(data, cfg)

    env = os.environ if env is None else env
    env_data: dict[str, Any] = {}
    for suffix, (section, key, typ) in _ENV_MAP.items():
        raw = env.get(ENV_PREFIX + suffix)
        if raw is None:
            continue
        try:
            value: Any = typ(raw)
        except ValueError as exc:
            raise ConfigError(f"{ENV_PREFIX + suffix}={raw!r} is not a valid {typ.__name__}") from exc
        if section is None:
            env_data[key] = value
        else:
            env_data.setdefault(section, {})[key] = value
    _apply(env_data, cfg)

    if overrides:
        _apply(overrides, cfg)
    cfg.validate()
    return cfg


def archive_config(cfg: RunConfig, out_dir: Path | str, name: str = "effective_config.json") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
