"""Deterministic discrete-event loop binding mobility, channel and protocol.

Events are keyed by (integer microseconds, sequence number), so the
processing order is total and identical across runs and platforms.  The
channel is an abstract unit disk: a transmission occupies its sender for
bytes*8/rate seconds and reaches a receiver only if the pair is in range at
both the start and the end of the transmission.  Beacons are broadcast;
data messages are unicast to their addressee.  There are no collisions and
a node may receive while transmitting.

Running the same scenario (same seed) twice yields bit-identical reports.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from random import Random
from typing import Dict, List, Optional, Tuple

from . import mobility
from .bloom import mix64
from .config import ChannelConfig, ScenarioConfig
from .mobility import RwpTrack, TraceSet, in_range, load_traces
from .protocol import (
    BeaconMessage,
    DataMessage,
    NodeState,
    PacketId,
    Strategy,
    StrategyConfig,
)

__all__ = [
    "ChannelConfig",
    "Metrics",
    "MetricsReport",
    "run",
    "efficiency_sweep",
    "strategy_compare",
    "transmission_duration",
    "TIMESERIES_HEADER",
]

_US = 1_000_000

# Event kinds, dispatched in (time, sequence) order.
_BEACON, _TX_COMPLETE, _TX_OPPORTUNITY, _NEIGHBOR_SWEEP, _SOURCE_TICK = range(5)

TIMESERIES_HEADER = [
    "t", "forwarded", "received", "delivered", "redundant",
    "control_bytes", "payload_bytes",
]

_SERIES = TIMESERIES_HEADER[1:]


def transmission_duration(message_bytes: int, rate: float) -> float:
    """Air time in seconds of a message at the channel bit rate."""
    return message_bytes * 8.0 / rate


def _derive_seed(global_seed: int, node_id: int, stream: int) -> int:
    return mix64(mix64(global_seed & ((1 << 64) - 1)) ^ mix64((stream << 32) | node_id))


@dataclass
class Metrics:
    """Raw counters and per-bucket time series of one run."""

    bucket_seconds: float
    n_buckets: int
    generated: int = 0
    forwarded: int = 0
    received: int = 0
    delivered: int = 0
    redundant: int = 0
    relay_receptions: int = 0
    control_bytes: int = 0
    payload_bytes: int = 0
    acked_removed: int = 0
    evicted: int = 0
    malformed: int = 0
    delays: List[float] = field(default_factory=list)
    series: Dict[str, List[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in _SERIES:
            self.series[name] = [0] * self.n_buckets

    def _bucket(self, t_s: float) -> int:
        return min(int(t_s / self.bucket_seconds), self.n_buckets - 1)

    def bump(self, name: str, t_s: float, amount: int = 1) -> None:
        setattr(self, name, getattr(self, name) + amount)
        if name in self.series:
            self.series[name][self._bucket(t_s)] += amount


@dataclass
class MetricsReport:
    """Counters, derived ratios and time series; serializes deterministically."""

    config: dict
    totals: dict
    derived: dict
    bucket_seconds: float
    bucket_t: List[int]
    series: Dict[str, List[int]]

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "totals": self.totals,
            "derived": self.derived,
            "timeseries": {
                "bucket_seconds": self.bucket_seconds,
                "t": self.bucket_t,
                **self.series,
            },
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def timeseries_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TIMESERIES_HEADER)
        for i, t in enumerate(self.bucket_t):
            writer.writerow([t] + [self.series[name][i] for name in _SERIES])
        return out.getvalue()

    def cumulative_delivered(self) -> List[int]:
        total = 0
        out = []
        for v in self.series["delivered"]:
            total += v
            out.append(total)
        return out


class _NodeRuntime:
    __slots__ = ("busy_until", "pending_beacon")

    def __init__(self) -> None:
        self.busy_until = 0
        self.pending_beacon = False


class _Simulation:
    def __init__(self, sc: ScenarioConfig, traces: Optional[TraceSet] = None):
        sc.validate()
        self.sc = sc
        self.rate = sc.channel.rate
        self.radio_range = sc.channel.range
        self.duration_us = round(sc.duration * _US)

        if sc.mobility == "rwp":
            self.n = sc.rwp.node_count
            self._tracks = [
                RwpTrack(sc.rwp, _derive_seed(sc.seed, i, 1)) for i in range(self.n)
            ]
            self._traces = None
        else:
            ts = traces
            if ts is None:
                files = sorted(p for p in Path(sc.traces_dir).iterdir() if p.is_file())
                ts = load_traces(files[: sc.traces_node_count])
            if sc.traces_t_start is not None:
                ts = ts.crop(sc.traces_t_start, sc.traces_t_end)
            self._traces = ts
            self._tracks = None
            self.n = len(ts.fixes)
            if self.n == 0:
                raise ValueError("trace set contains no usable nodes")

        n_buckets = max(1, math.ceil(sc.duration / sc.bucket_seconds))
        self.metrics = Metrics(sc.bucket_seconds, n_buckets)
        self.delivered_ids: set = set()
        self.in_flight: Dict[int, set] = defaultdict(set)

        greedy = sc.source_model == "greedy"
        peer_ids = tuple(range(self.n))
        self.nodes = [
            NodeState(
                node_id=i,
                strategy=sc.strategy,
                buffer_capacity=sc.buffer_capacity,
                beacon_interval=sc.beacon_interval,
                payload_len=sc.payload_len,
                peer_ids=peer_ids,
                rng_seed=_derive_seed(sc.seed, i, 0),
                greedy_source=greedy and self.n > 1,
                oracle=None,
                unbounded_windows=sc.exact_oracle,
            )
            for i in range(self.n)
        ]
        if sc.exact_oracle:
            for node in self.nodes:
                node.oracle = self._omniscient_received
        self.runtimes = [_NodeRuntime() for _ in range(self.n)]
        self._source_rngs = [
            Random(_derive_seed(sc.seed, i, 2)) for i in range(self.n)
        ]

        self._queue: List[tuple] = []
        self._seq = 0

    # The diagnostic oracle: "received or about to receive", with no staleness.
    def _omniscient_received(self, neighbor_id: int, pid: PacketId) -> bool:
        node = self.nodes[neighbor_id]
        return (
            pid in node._log_set
            or pid in node._dest_set
            or pid in self.in_flight[neighbor_id]
        )

    def _schedule(self, t_us: int, kind: int, node: int, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t_us, self._seq, kind, node, payload))

    def _position(self, i: int, t_us: int):
        t = t_us / _US
        if self._tracks is not None:
            return self._tracks[i].position(t)
        return self._traces.position(i, t, self.sc.traces_max_gap)

    def _tx_duration_us(self, size_bytes: int) -> int:
        return max(1, math.ceil(size_bytes * 8 * _US / self.rate))

    def run(self) -> MetricsReport:
        sc = self.sc
        interval_ms = max(1, round(sc.beacon_interval * 1000))
        interval_us = interval_ms * 1000
        sweep_us = max(1, round(self.nodes[0].disconnection_timeout / 2 * _US))
        for i in range(self.n):
            self._schedule((i % interval_ms) * 1000, _BEACON, i)
            self._schedule(sweep_us, _NEIGHBOR_SWEEP, i)
        if sc.source_model == "poisson" and sc.source_rate > 0 and self.n > 1:
            for i in range(self.n):
                dt = self._source_rngs[i].expovariate(sc.source_rate)
                self._schedule(round(dt * _US), _SOURCE_TICK, i)

        while self._queue:
            t_us, _, kind, i, payload = heapq.heappop(self._queue)
            if t_us > self.duration_us:
                break
            if kind == _BEACON:
                self._schedule(t_us + interval_us, _BEACON, i)
                self._on_beacon_timer(i, t_us)
            elif kind == _TX_COMPLETE:
                self._on_tx_complete(i, t_us, payload)
            elif kind == _TX_OPPORTUNITY:
                self._on_tx_opportunity(i, t_us)
            elif kind == _NEIGHBOR_SWEEP:
                self.nodes[i].expire_neighbors(t_us / _US)
                self._schedule(t_us + sweep_us, _NEIGHBOR_SWEEP, i)
            elif kind == _SOURCE_TICK:
                self.nodes[i].mint_packet(t_us / _US)
                self._wake(i, t_us)
                dt = self._source_rngs[i].expovariate(self.sc.source_rate)
                self._schedule(t_us + round(dt * _US), _SOURCE_TICK, i)

        return self._report()

    def _wake(self, i: int, t_us: int) -> None:
        if self.runtimes[i].busy_until <= t_us:
            self._schedule(t_us, _TX_OPPORTUNITY, i)

    def _on_beacon_timer(self, i: int, t_us: int) -> None:
        if self._position(i, t_us) is None:
            return
        rt = self.runtimes[i]
        if rt.busy_until > t_us:
            rt.pending_beacon = True
            return
        self._start_beacon(i, t_us)

    def _start_beacon(self, i: int, t_us: int) -> None:
        pos_i = self._position(i, t_us)
        if pos_i is None:
            return
        msg = self.nodes[i].make_beacon(t_us / _US)
        size = msg.encoded_size()
        receivers = []
        for j in range(self.n):
            if j == i:
                continue
            pos_j = self._position(j, t_us)
            if pos_j is not None and in_range(pos_i, pos_j, self.radio_range):
                receivers.append(j)
        self.metrics.bump("control_bytes", t_us / _US, size)
        dur = self._tx_duration_us(size)
        self.runtimes[i].busy_until = t_us + dur
        self._schedule(t_us + dur, _TX_COMPLETE, i, (msg, receivers))

    def _on_tx_opportunity(self, i: int, t_us: int) -> None:
        rt = self.runtimes[i]
        if rt.busy_until > t_us:
            return
        if self._position(i, t_us) is None:
            return
        node = self.nodes[i]
        sel = node.select_transmission(t_us / _US)
        if self.sc.debug_checks:
            node.check_invariants()
        if sel is None:
            return
        receiver, msg = sel
        t_s = t_us / _US
        size = msg.encoded_size()
        self.metrics.bump("forwarded", t_s)
        self.metrics.bump("control_bytes", t_s, size - msg.packet.payload_len)
        self.metrics.bump("payload_bytes", t_s, msg.packet.payload_len)
        pos_i = self._position(i, t_us)
        pos_j = self._position(receiver, t_us)
        receivers = []
        if pos_j is not None and in_range(pos_i, pos_j, self.radio_range):
            receivers.append(receiver)
            if self.sc.exact_oracle:
                self.in_flight[receiver].add(msg.packet.id)
        dur = self._tx_duration_us(size)
        rt.busy_until = t_us + dur
        self._schedule(t_us + dur, _TX_COMPLETE, i, (msg, receivers))

    def _on_tx_complete(self, i: int, t_us: int, payload) -> None:
        msg, receivers = payload
        pos_i = self._position(i, t_us)
        for j in receivers:
            pos_j = self._position(j, t_us)
            if pos_i is None or pos_j is None or not in_range(pos_i, pos_j, self.radio_range):
                continue  # contact broke during the transmission
            actions = self.nodes[j].handle_message(msg, t_us / _US)
            self._tally(actions, t_us)
            if self.sc.debug_checks:
                self.nodes[j].check_invariants()
            self._wake(j, t_us)
        if self.sc.exact_oracle and isinstance(msg, DataMessage):
            for j in receivers:
                self.in_flight[j].discard(msg.packet.id)
        rt = self.runtimes[i]
        if rt.pending_beacon:
            rt.pending_beacon = False
            if self._position(i, t_us) is not None:
                self._start_beacon(i, t_us)
                return
        self._schedule(t_us, _TX_OPPORTUNITY, i)

    def _tally(self, actions, t_us: int) -> None:
        m = self.metrics
        t_s = t_us / _US
        for act in actions:
            if act.kind == "delivered":
                m.bump("received", t_s)
                if act.packet_id in self.delivered_ids:
                    m.bump("redundant", t_s)
                else:
                    self.delivered_ids.add(act.packet_id)
                    m.bump("delivered", t_s)
                    m.delays.append(t_s - act.packet.created_at)
            elif act.kind == "relayed":
                m.bump("received", t_s)
                m.relay_receptions += 1
            elif act.kind == "redundant":
                m.bump("received", t_s)
                m.bump("redundant", t_s)
            elif act.kind == "ack_removed":
                m.acked_removed += 1
            elif act.kind == "evicted":
                m.evicted += 1
            elif act.kind == "malformed":
                m.malformed += 1

    def _report(self) -> MetricsReport:
        m = self.metrics
        m.generated = sum(node.serial_counter for node in self.nodes)
        totals = {
            "generated": m.generated,
            "forwarded": m.forwarded,
            "received": m.received,
            "delivered": m.delivered,
            "redundant": m.redundant,
            "relay_receptions": m.relay_receptions,
            "control_bytes": m.control_bytes,
            "payload_bytes": m.payload_bytes,
            "acked_removed": m.acked_removed,
            "evicted": m.evicted,
            "malformed": m.malformed,
        }
        traffic = m.control_bytes + m.payload_bytes
        derived = {
            "delivery_ratio": m.delivered / m.generated if m.generated else 0.0,
            "efficiency": m.received / m.forwarded if m.forwarded else 0.0,
            "overhead_fraction": m.control_bytes / traffic if traffic else 0.0,
            "redundancy_fraction": m.redundant / m.received if m.received else 0.0,
            "mean_delay_s": (sum(m.delays) / len(m.delays)) if m.delays else None,
            "node_count": self.n,
        }
        bucket_t = [round(i * m.bucket_seconds) for i in range(m.n_buckets)]
        return MetricsReport(
            config=self.sc.to_dict(),
            totals=totals,
            derived=derived,
            bucket_seconds=m.bucket_seconds,
            bucket_t=bucket_t,
            series=m.series,
        )


def run(scenario: ScenarioConfig, traces: Optional[TraceSet] = None) -> MetricsReport:
    """Execute one scenario from t=0 to its duration; fully deterministic."""
    return _Simulation(scenario, traces).run()


def efficiency_sweep(
    base: ScenarioConfig, beacon_delays: List[float], traces: Optional[TraceSet] = None
) -> List[Tuple[float, MetricsReport]]:
    """Run the base scenario once per beacon delay; returns (delay, report) rows.

    The disconnection timeout follows each delay automatically (10% above).
    """
    if not beacon_delays:
        raise ValueError("need at least one beacon delay")
    if any(d <= 0 for d in beacon_delays):
        raise ValueError("beacon delays must be positive")
    if list(beacon_delays) != sorted(beacon_delays):
        raise ValueError("beacon delays must be ascending")
    out = []
    for delay in beacon_delays:
        report = run(replace(base, beacon_interval=delay), traces)
        out.append((delay, report))
    return out


def strategy_compare(
    base: ScenarioConfig, traces: Optional[TraceSet] = None
) -> Dict[str, MetricsReport]:
    """Run strategies A, B and C on identical mobility (same seed).

    Each strategy gets its own default filter sizes for the base scenario's
    buffer capacity; everything else is held fixed.
    """
    out = {}
    for kind in (Strategy.A, Strategy.B, Strategy.C):
        strat = StrategyConfig.defaults(
            kind, base.buffer_capacity, base.strategy.p_target
        )
        out[kind.value] = run(replace(base, strategy=strat), traces)
    return out
