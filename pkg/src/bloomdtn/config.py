"""Scenario configuration: paper-scale defaults, desk-scale preset, file parsing.

Scenario files are flat ``key = value`` lines ('#' starts a comment).  Every
omitted key falls back to the defaults below (40 waypoint walkers on a
1000x1000 grid, 50-packet buffers, 1000-byte payloads, 1 Mbps, 1 s beacons,
2% filter false-alarm target, 3600 s runs).  Strategy sizes left unset take
the per-strategy defaults for the configured buffer capacity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .mobility import DEFAULT_MAX_GAP, RwpConfig
from .protocol import Strategy, StrategyConfig

__all__ = ["ChannelConfig", "ScenarioConfig", "ConfigError", "parse_config", "CONFIG_KEYS"]


class ConfigError(ValueError):
    """Scenario file or scenario value rejected; message names the key."""


@dataclass(frozen=True)
class ChannelConfig:
    """Abstract disk channel: shared bit rate and radio range."""

    rate: float = 1_000_000.0
    range: float = 50.0

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ConfigError(f"channel.rate must be positive, got {self.rate}")
        if self.range <= 0:
            raise ConfigError(f"channel.range must be positive, got {self.range}")


@dataclass
class ScenarioConfig:
    """Everything one simulation run needs, defaults matched to the paper."""

    mobility: str = "rwp"  # "rwp" | "traces"
    rwp: RwpConfig = field(default_factory=RwpConfig)
    traces_dir: Optional[str] = None
    traces_node_count: int = 100
    traces_t_start: Optional[float] = None
    traces_t_end: Optional[float] = None
    traces_max_gap: float = DEFAULT_MAX_GAP
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    strategy: StrategyConfig = field(
        default_factory=lambda: StrategyConfig.defaults(Strategy.A)
    )
    buffer_capacity: int = 50
    beacon_interval: float = 1.0
    duration: float = 3600.0
    source_model: str = "greedy"  # "greedy" | "poisson"
    source_rate: float = 0.1  # per-node packets/s, poisson model only
    payload_len: int = 1000
    seed: int = 1
    bucket_seconds: float = 60.0
    exact_oracle: bool = False
    debug_checks: bool = False

    @classmethod
    def desk_scale(cls, seed: int = 1, strategy_kind: Strategy = Strategy.A) -> "ScenarioConfig":
        """Small scenario sized to finish in seconds, for CI and sweeps."""
        buffer_capacity = 25
        return cls(
            rwp=RwpConfig(width=500.0, height=500.0, node_count=20),
            strategy=StrategyConfig.defaults(strategy_kind, buffer_capacity),
            buffer_capacity=buffer_capacity,
            duration=600.0,
            source_model="poisson",
            source_rate=0.2,
            seed=seed,
        )

    def validate(self) -> None:
        if self.mobility not in ("rwp", "traces"):
            raise ConfigError(f"mobility must be 'rwp' or 'traces', got {self.mobility!r}")
        if self.mobility == "traces":
            if not self.traces_dir:
                raise ConfigError("traces.dir is required when mobility = traces")
            if not Path(self.traces_dir).is_dir():
                raise ConfigError(f"traces.dir does not exist: {self.traces_dir}")
            if self.traces_node_count < 1:
                raise ConfigError("traces.node_count must be >= 1")
            if self.traces_max_gap <= 0:
                raise ConfigError("traces.max_gap must be positive")
            if (self.traces_t_start is None) != (self.traces_t_end is None):
                raise ConfigError("traces.t_start and traces.t_end must be set together")
            if self.traces_t_start is not None and self.traces_t_end <= self.traces_t_start:
                raise ConfigError("traces.t_end must exceed traces.t_start")
        if self.buffer_capacity < 1:
            raise ConfigError(f"buffer_capacity must be >= 1, got {self.buffer_capacity}")
        if self.beacon_interval <= 0:
            raise ConfigError(f"beacon_interval must be positive, got {self.beacon_interval}")
        if self.duration <= 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")
        if self.payload_len < 0:
            raise ConfigError(f"payload_len must be >= 0, got {self.payload_len}")
        if self.source_model not in ("greedy", "poisson"):
            raise ConfigError(
                f"source.model must be 'greedy' or 'poisson', got {self.source_model!r}"
            )
        if self.source_model == "poisson" and self.source_rate < 0:
            raise ConfigError(f"source.rate must be >= 0, got {self.source_rate}")
        if self.bucket_seconds <= 0:
            raise ConfigError(f"bucket_seconds must be positive, got {self.bucket_seconds}")
        try:
            self.strategy.validate(self.buffer_capacity)
        except ValueError as exc:
            raise ConfigError(f"strategy: {exc}") from exc

    def to_dict(self) -> dict:
        """Flat, fully resolved echo of this scenario (same keys as the file)."""
        d = {
            "mobility": self.mobility,
            "channel.rate": self.channel.rate,
            "channel.range": self.channel.range,
            "strategy.kind": self.strategy.kind.value,
            "strategy.window_n": self.strategy.window_n,
            "strategy.small_n": self.strategy.small_n,
            "strategy.received_j": self.strategy.received_j,
            "strategy.p_target": self.strategy.p_target,
            "buffer_capacity": self.buffer_capacity,
            "beacon_interval": self.beacon_interval,
            "duration": self.duration,
            "source.model": self.source_model,
            "source.rate": self.source_rate,
            "payload_len": self.payload_len,
            "seed": self.seed,
            "bucket_seconds": self.bucket_seconds,
            "exact_oracle": self.exact_oracle,
        }
        if self.mobility == "rwp":
            d.update({
                "rwp.width": self.rwp.width,
                "rwp.height": self.rwp.height,
                "rwp.node_count": self.rwp.node_count,
                "rwp.v_min": self.rwp.v_min,
                "rwp.v_max": self.rwp.v_max,
                "rwp.pause": self.rwp.pause,
            })
        else:
            d.update({
                "traces.dir": self.traces_dir,
                "traces.node_count": self.traces_node_count,
                "traces.t_start": self.traces_t_start,
                "traces.t_end": self.traces_t_end,
                "traces.max_gap": self.traces_max_gap,
            })
        return d


def _to_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


_INT, _FLOAT, _STR, _BOOL = "int", "float", "str", "bool"

CONFIG_KEYS = {
    "mobility": _STR,
    "rwp.width": _FLOAT,
    "rwp.height": _FLOAT,
    "rwp.node_count": _INT,
    "rwp.v_min": _FLOAT,
    "rwp.v_max": _FLOAT,
    "rwp.pause": _FLOAT,
    "traces.dir": _STR,
    "traces.node_count": _INT,
    "traces.t_start": _FLOAT,
    "traces.t_end": _FLOAT,
    "traces.max_gap": _FLOAT,
    "channel.rate": _FLOAT,
    "channel.range": _FLOAT,
    "strategy.kind": _STR,
    "strategy.window_n": _INT,
    "strategy.small_n": _INT,
    "strategy.received_j": _INT,
    "strategy.p_target": _FLOAT,
    "buffer_capacity": _INT,
    "beacon_interval": _FLOAT,
    "duration": _FLOAT,
    "payload_len": _INT,
    "source.model": _STR,
    "source.rate": _FLOAT,
    "seed": _INT,
    "bucket_seconds": _FLOAT,
    "exact_oracle": _BOOL,
    "debug_checks": _BOOL,
}


def _read_pairs(path) -> dict:
    pairs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {text!r}")
            key, _, raw = text.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown key {key!r} (line {lineno})")
            pairs[key] = raw
    return pairs


def _coerce(pairs: dict) -> dict:
    out = {}
    for key, raw in pairs.items():
        want = CONFIG_KEYS[key]
        try:
            if want == _INT:
                out[key] = int(raw)
            elif want == _FLOAT:
                out[key] = float(raw)
            elif want == _BOOL:
                out[key] = _to_bool(raw, key)
            else:
                out[key] = raw
        except ValueError as exc:
            raise ConfigError(f"{key}: expected {want}, got {raw!r}") from exc
    return out


def parse_config(path) -> ScenarioConfig:
    """Load a scenario file, fill paper defaults, validate every constraint."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = _coerce(_read_pairs(path))

    base = ScenarioConfig()
    try:
        rwp = dataclasses.replace(
            base.rwp,
            width=values.get("rwp.width", base.rwp.width),
            height=values.get("rwp.height", base.rwp.height),
            node_count=values.get("rwp.node_count", base.rwp.node_count),
            v_min=values.get("rwp.v_min", base.rwp.v_min),
            v_max=values.get("rwp.v_max", base.rwp.v_max),
            pause=values.get("rwp.pause", base.rwp.pause),
        )
    except ValueError as exc:
        raise ConfigError(f"rwp: {exc}") from exc
    channel = ChannelConfig(
        rate=values.get("channel.rate", base.channel.rate),
        range=values.get("channel.range", base.channel.range),
    )

    buffer_capacity = values.get("buffer_capacity", base.buffer_capacity)
    kind_raw = values.get("strategy.kind", "A")
    try:
        kind = Strategy(kind_raw.upper())
    except ValueError:
        raise ConfigError(f"strategy.kind must be A, B or C, got {kind_raw!r}") from None
    defaults = StrategyConfig.defaults(
        kind, buffer_capacity, values.get("strategy.p_target", 0.02)
    )
    strategy = StrategyConfig(
        kind=kind,
        window_n=values.get("strategy.window_n", defaults.window_n),
        small_n=values.get("strategy.small_n", defaults.small_n),
        received_j=values.get("strategy.received_j", defaults.received_j),
        p_target=values.get("strategy.p_target", defaults.p_target),
    )

    sc = ScenarioConfig(
        mobility=values.get("mobility", base.mobility),
        rwp=rwp,
        traces_dir=values.get("traces.dir", base.traces_dir),
        traces_node_count=values.get("traces.node_count", base.traces_node_count),
        traces_t_start=values.get("traces.t_start", base.traces_t_start),
        traces_t_end=values.get("traces.t_end", base.traces_t_end),
        traces_max_gap=values.get("traces.max_gap", base.traces_max_gap),
        channel=channel,
        strategy=strategy,
        buffer_capacity=buffer_capacity,
        beacon_interval=values.get("beacon_interval", base.beacon_interval),
        duration=values.get("duration", base.duration),
        source_model=values.get("source.model", base.source_model),
        source_rate=values.get("source.rate", base.source_rate),
        payload_len=values.get("payload_len", base.payload_len),
        seed=values.get("seed", base.seed),
        bucket_seconds=values.get("bucket_seconds", base.bucket_seconds),
        exact_oracle=values.get("exact_oracle", base.exact_oracle),
        debug_checks=values.get("debug_checks", base.debug_checks),
    )
    sc.validate()
    return sc
