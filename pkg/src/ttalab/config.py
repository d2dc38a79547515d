"""Flat key=value experiment configuration and the run manifest.

The format is deliberately trivial to parse from any language: one
``key=value`` per line, ``#`` comments, keys mirroring the engine and
stream field names. A manifest snapshot is written before any results so
a run can always be reproduced from its output directory alone.
"""

import dataclasses
import json
import time
from dataclasses import dataclass

from .datagen import Shift, StreamSpec
from .engine import EngineConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


_ENGINE_KEYS = {
    "method": str,
    "batch_size": int,
    "inner_iterations": int,
    "learning_rate": float,
    "lambda_reg": float,
    "lambda_oce": float,
    "open_set": bool,
    "alpha_init": float,
    "tau": float,
    "seed": int,
    "scont_mode": str,
    "memory_enabled": bool,
}

_STREAM_KEYS = {
    "n_classes": int,
    "d_in": int,
    "d_emb": int,
    "samples_per_batch": int,
    "n_batches": int,
    "cluster_spread": float,
    "shift": str,
    "ood_fraction": float,
    "prototype_margin": float,
}

CONFIG_KEYS = {**_ENGINE_KEYS, **_STREAM_KEYS}


def _convert(key: str, raw: str, typ):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError("expected true/false")
        return typ(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"field {key}: cannot parse {raw!r} ({exc})") from None


def parse_config_text(text: str) -> dict:
    """Parse key=value lines into typed values, rejecting unknown keys."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key: {key}")
        values[key] = _convert(key, raw, CONFIG_KEYS[key])
    return values


def build_configs(values: dict, seed_override: int | None = None
                  ) -> tuple[EngineConfig, StreamSpec]:
    """Assemble validated engine and stream configs from parsed values."""
    values = dict(values)
    if seed_override is not None:
        values["seed"] = int(seed_override)

    # the engine batch and the stream batch are the same quantity; either
    # key may set it, both must agree if given
    bs = values.get("batch_size")
    spb = values.get("samples_per_batch")
    if bs is None and spb is not None:
        values["batch_size"] = spb
    elif spb is None and bs is not None:
        values["samples_per_batch"] = bs
    elif bs is not None and spb is not None and bs != spb:
        raise ConfigError("field batch_size: must equal samples_per_batch")

    engine_kwargs = {k: values[k] for k in _ENGINE_KEYS if k in values}
    stream_kwargs = {k: values[k] for k in _STREAM_KEYS if k in values}
    stream_kwargs["seed"] = engine_kwargs.get("seed", 0)
    if "shift" in stream_kwargs:
        try:
            stream_kwargs["shift"] = Shift.parse(stream_kwargs["shift"])
        except ValueError as exc:
            raise ConfigError(f"field shift: {exc}") from None
    try:
        ecfg = EngineConfig(**engine_kwargs)
        sspec = StreamSpec(**stream_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if sspec.ood_fraction > 0 and not ecfg.open_set:
        raise ConfigError("field ood_fraction: must be 0 unless open_set=true")
    return ecfg, sspec


def load_config(path, seed_override: int | None = None
                ) -> tuple[EngineConfig, StreamSpec]:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return build_configs(parse_config_text(text), seed_override)


def config_snapshot(ecfg: EngineConfig, sspec: StreamSpec) -> dict:
    """Fully-resolved key=value view of a run's configuration."""
    snap = {}
    for f in dataclasses.fields(ecfg):
        snap[f.name] = getattr(ecfg, f.name)
    for f in dataclasses.fields(sspec):
        if f.name == "seed":
            continue
        v = getattr(sspec, f.name)
        snap[f.name] = str(v) if f.name == "shift" else v
    return snap


@dataclass
class RunManifest:
    version: str
    command: str
    seed: int
    config: dict
    outputs: list[str]
    duration_seconds: float | None = None

    def write(self, path) -> None:
        with open(path, "w") as f:
            json.dump(dataclasses.asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")


class ManifestTimer:
    """Writes the manifest before results, then patches in the duration."""

    def __init__(self, path, manifest: RunManifest):
        self.path = path
        self.manifest = manifest
        self._t0 = time.perf_counter()
        manifest.write(path)

    def finish(self) -> None:
        self.manifest.duration_seconds = time.perf_counter() - self._t0
        self.manifest.write(self.path)
