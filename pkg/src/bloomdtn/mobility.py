"""Node position sources: random-waypoint walks and taxicab GPS traces.

Both sources answer the same question: where is node ``i`` at time ``t``?
Random-waypoint positions are a pure function of (config, seed, t), so any
two queries agree across processes.  Trace positions come from per-cab fix
files, projected to local planar meters and linearly interpolated; long
silences in a trace mean the cab is unobserved, in which case the position
is None rather than a straight line across the city.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "Position",
    "RwpConfig",
    "RwpTrack",
    "rwp_position",
    "TraceSet",
    "load_traces",
    "trace_position",
    "in_range",
    "EARTH_RADIUS_M",
    "DEFAULT_MAX_GAP",
]

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_MAX_GAP = 600.0


class Position(NamedTuple):
    x: float
    y: float


def in_range(a: Position, b: Position, radio_range: float) -> bool:
    """True when the Euclidean distance is at most radio_range (inclusive)."""
    if radio_range <= 0:
        raise ValueError(f"radio range must be positive, got {radio_range}")
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    return dx * dx + dy * dy <= radio_range * radio_range


@dataclass(frozen=True)
class RwpConfig:
    """Random-waypoint area, speed band and pause time."""

    width: float = 1000.0
    height: float = 1000.0
    v_min: float = 1.0
    v_max: float = 20.0
    pause: float = 0.0
    node_count: int = 40

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("area dimensions must be positive")
        if not 0 < self.v_min <= self.v_max:
            raise ValueError(f"need 0 < v_min <= v_max, got [{self.v_min}, {self.v_max}]")
        if self.pause < 0:
            raise ValueError("pause must be >= 0")
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")


class _Leg(NamedTuple):
    t0: float
    t1: float
    x0: float
    y0: float
    x1: float
    y1: float


class RwpTrack:
    """One node's waypoint itinerary, generated lazily and memoized.

    The itinerary is fully determined by (config, seed); queries at any time
    are reproducible regardless of query order.
    """

    def __init__(self, cfg: RwpConfig, seed: int):
        self.cfg = cfg
        self._rng = Random(seed)
        x = self._rng.uniform(0.0, cfg.width)
        y = self._rng.uniform(0.0, cfg.height)
        self._legs: List[_Leg] = []
        self._t_end = 0.0
        self._x, self._y = x, y

    def _extend_to(self, t: float) -> None:
        cfg = self.cfg
        while self._t_end <= t:
            tx = self._rng.uniform(0.0, cfg.width)
            ty = self._rng.uniform(0.0, cfg.height)
            speed = self._rng.uniform(cfg.v_min, cfg.v_max)
            dist = math.hypot(tx - self._x, ty - self._y)
            if dist < 1e-12:
                continue
            t1 = self._t_end + dist / speed
            self._legs.append(_Leg(self._t_end, t1, self._x, self._y, tx, ty))
            self._t_end = t1
            self._x, self._y = tx, ty
            if cfg.pause > 0:
                t1 = self._t_end + cfg.pause
                self._legs.append(_Leg(self._t_end, t1, tx, ty, tx, ty))
                self._t_end = t1

    def position(self, t: float) -> Position:
        if t < 0:
            raise ValueError(f"t must be >= 0, got {t}")
        self._extend_to(t)
        # Legs are contiguous; binary search for the covering one.
        lo, hi = 0, len(self._legs) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self._legs[mid].t1 <= t:
                lo = mid + 1
            else:
                hi = mid
        leg = self._legs[lo]
        frac = (t - leg.t0) / (leg.t1 - leg.t0)
        return Position(leg.x0 + (leg.x1 - leg.x0) * frac,
                        leg.y0 + (leg.y1 - leg.y0) * frac)


def rwp_position(cfg: RwpConfig, node_seed: int, t: float) -> Position:
    """Position of a waypoint walker at time t; pure in (cfg, seed, t)."""
    return RwpTrack(cfg, node_seed).position(t)


@dataclass
class TraceSet:
    """Per-node GPS fixes in planar meters, timestamps normalized to t=0."""

    fixes: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]]  # t, x, y ascending
    t_begin: float = 0.0
    t_end: float = 0.0
    origin: Tuple[float, float] = (0.0, 0.0)  # lat, lon of the projection center
    skipped_lines: int = 0

    def node_ids(self) -> List[int]:
        return sorted(self.fixes)

    def position(self, node: int, t: float, max_gap: float = DEFAULT_MAX_GAP) -> Optional[Position]:
        return trace_position(self, node, t, max_gap)

    def crop(self, t_start: float, t_end: float) -> "TraceSet":
        """Keep fixes inside [t_start, t_end], re-zeroed to the window start."""
        if t_end <= t_start:
            raise ValueError("empty crop window")
        out: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        for node, (ts, xs, ys) in self.fixes.items():
            keep = (ts >= t_start) & (ts <= t_end)
            if not keep.any():
                continue
            out[node] = (ts[keep] - t_start, xs[keep], ys[keep])
        span = t_end - t_start
        return TraceSet(out, 0.0, span, self.origin, self.skipped_lines)


def _project(lat: np.ndarray, lon: np.ndarray, lat0: float, lon0: float):
    x = EARTH_RADIUS_M * np.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * np.radians(lat - lat0)
    return x, y


def load_traces(
    files: Sequence,
    projection_origin: Optional[Tuple[float, float]] = None,
) -> TraceSet:
    """Parse cab files of ``lat lon occupancy epoch`` lines into a TraceSet.

    Raw files list fixes newest-first; they are re-sorted ascending, equal
    timestamps collapsed keeping the last one read, malformed lines skipped
    and counted.  Node ids follow the order of ``files`` (files with no
    usable fix are excluded with a warning).  The default projection origin
    is the centroid of all parsed fixes.
    """
    parsed: List[Tuple[Path, np.ndarray, np.ndarray, np.ndarray]] = []
    skipped = 0
    for path in files:
        path = Path(path)
        lats: List[float] = []
        lons: List[float] = []
        times: List[float] = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 4:
                    skipped += 1
                    continue
                try:
                    lat = float(parts[0])
                    lon = float(parts[1])
                    float(parts[2])  # occupancy flag, ignored
                    ts = float(parts[3])
                except ValueError:
                    skipped += 1
                    continue
                lats.append(lat)
                lons.append(lon)
                times.append(ts)
        if not times:
            log.warning("trace file %s has no usable fixes; node excluded", path)
            continue
        ts = np.asarray(times)
        order = np.argsort(ts, kind="stable")
        ts = ts[order]
        la = np.asarray(lats)[order]
        lo = np.asarray(lons)[order]
        # Collapse duplicate timestamps, keeping the last entry of each run.
        keep = np.ones(len(ts), dtype=bool)
        keep[:-1] = ts[1:] != ts[:-1]
        parsed.append((path, ts[keep], la[keep], lo[keep]))

    if not parsed:
        return TraceSet({}, 0.0, 0.0, projection_origin or (0.0, 0.0), skipped)

    if projection_origin is None:
        lat0 = float(np.mean(np.concatenate([la for _, _, la, _ in parsed])))
        lon0 = float(np.mean(np.concatenate([lo for _, _, _, lo in parsed])))
    else:
        lat0, lon0 = projection_origin

    t_zero = min(float(ts[0]) for _, ts, _, _ in parsed)
    fixes: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    t_end = 0.0
    for node, (_, ts, la, lo) in enumerate(parsed):
        x, y = _project(la, lo, lat0, lon0)
        t = ts - t_zero
        fixes[node] = (t, x, y)
        t_end = max(t_end, float(t[-1]))
    return TraceSet(fixes, 0.0, t_end, (lat0, lon0), skipped)


def trace_position(
    ts: TraceSet, node: int, t: float, max_gap: float = DEFAULT_MAX_GAP
) -> Optional[Position]:
    """Interpolated position, or None when the node is unobserved at t."""
    entry = ts.fixes.get(node)
    if entry is None:
        return None
    times, xs, ys = entry
    if t < times[0] or t > times[-1]:
        return None
    i = int(np.searchsorted(times, t, side="right"))
    if i > 0 and times[i - 1] == t:
        return Position(float(xs[i - 1]), float(ys[i - 1]))
    lo, hi = i - 1, i
    if times[hi] - times[lo] > max_gap:
        return None
    frac = (t - times[lo]) / (times[hi] - times[lo])
    return Position(
        float(xs[lo] + (xs[hi] - xs[lo]) * frac),
        float(ys[lo] + (ys[hi] - ys[lo]) * frac),
    )
