"""Run configuration file: JSON with ``index``, ``pipeline``, ``beam`` and ``provider`` sections.

Precedence is defaults < file < command-line ``--set key=value`` overrides.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

from .beam import BeamConfig
from .embedding import ProviderConfig
from .errors import ConfigError
from .pipeline import PipelineConfig

DEFAULT_TAU_SYN = 0.8


@dataclass(frozen=True)
class RunConfig:
    tau_syn: float = DEFAULT_TAU_SYN
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)

    def to_dict(self) -> dict:
        pipe = dataclasses.asdict(self.pipeline)
        beam = pipe.pop("beam")
        provider = dataclasses.asdict(self.provider)
        provider.pop("token")  # never written back out
        return {"index": {"tau_syn": self.tau_syn}, "pipeline": pipe, "beam": beam, "provider": provider}


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: str, values: dict, allowed: set[str]) -> None:
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def apply_dict(base: RunConfig, data: dict) -> RunConfig:
    """Layer a parsed config mapping on top of ``base``."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    _check_keys("root", data, {"index", "pipeline", "beam", "provider"})
    sections = {name: {} if data.get(name) is None else data[name] for name in ("index", "pipeline", "beam", "provider")}
    for name, values in sections.items():
        if not isinstance(values, dict):
            raise ConfigError(f"section [{name}] must be an object")
    _check_keys("index", sections["index"], {"tau_syn"})
    _check_keys("pipeline", sections["pipeline"], _field_names(PipelineConfig) - {"beam"})
    _check_keys("beam", sections["beam"], _field_names(BeamConfig))
    _check_keys("provider", sections["provider"], _field_names(ProviderConfig))
    try:
        beam = replace(base.pipeline.beam, **sections["beam"])
        pipeline = replace(base.pipeline, beam=beam, **sections["pipeline"])
        provider = replace(base.provider, **sections["provider"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    tau = float(sections["index"].get("tau_syn", base.tau_syn))
    if not 0.0 < tau <= 1.0:
        raise ConfigError("tau_syn must lie in (0, 1]")
    return RunConfig(tau, pipeline, provider)


def load_config(path: str | os.PathLike | None = None, overrides: Sequence[str] = ()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = apply_dict(cfg, json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if overrides:
        cfg = apply_dict(cfg, parse_overrides(overrides))
    return cfg


def parse_overrides(items: Sequence[str]) -> dict:
    """``["beam.max_length=1", "pipeline.k_out=3"]`` -> nested mapping.

    Values are parsed as JSON where possible, otherwise taken as strings.
    A bare key is looked up in the pipeline section.
    """
    out: dict = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        section, _, name = key.strip().rpartition(".")
        section = section or "pipeline"
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.setdefault(section, {})[name] = value
    return out
