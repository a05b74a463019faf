"""Per-node state machine for epidemic forwarding with filter summaries.

Each node keeps a bounded FIFO buffer of packets it is carrying, a sliding
log of recently received packet ids, a list of ids known to have reached
their destinations, and one record per live neighbor.  Neighbors are
discovered and kept alive purely through message reception; a silent
neighbor is dropped after the disconnection timeout (10% above the beacon
interval).

Three filter-management strategies are supported:

* ``A`` - every beacon and every data packet carries one filter over the
  reception log (window of the last N ids).
* ``B`` - beacons carry the big window filter; data packets piggyback a
  small delta filter of ids received since the node's last beacon.
* ``C`` - beacons carry a filter over the current buffer plus a second
  filter over ids known delivered, which acts as a collective
  acknowledgment and frees buffer space network-wide; data packets
  piggyback the same small delta filter as B.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from random import Random
from typing import Callable, Dict, List, Optional, Tuple

from .bloom import BloomFilter, BloomParams, HashFamilySeed, derive_hash_family, optimize_params

__all__ = [
    "PacketId",
    "Packet",
    "Strategy",
    "StrategyConfig",
    "NeighborRecord",
    "NodeState",
    "BeaconMessage",
    "DataMessage",
    "ProtocolAction",
    "MalformedMessageError",
    "decode_message",
    "DISCONNECT_FACTOR",
]

BEACON_TYPE = 0x01
DATA_TYPE = 0x02

# Disconnection timer sits 10% above the beacon interval.
DISCONNECT_FACTOR = 1.1

DEFAULT_PAYLOAD_LEN = 1000
DEFAULT_BUFFER_CAPACITY = 50
DEFAULT_P_TARGET = 0.02
DEFAULT_SMALL_N = 20
DEFAULT_RECEIVED_J = 150


class MalformedMessageError(ValueError):
    """Raised when a wire message cannot be decoded."""


@dataclass(frozen=True, order=True)
class PacketId:
    """Network-wide unique id: 16-bit source node + 16-bit source serial."""

    source_node: int
    serial: int

    @property
    def value(self) -> int:
        """32-bit wire form: source in the high half, serial in the low."""
        return ((self.source_node & 0xFFFF) << 16) | (self.serial & 0xFFFF)

    @classmethod
    def from_value(cls, value: int) -> "PacketId":
        return cls((value >> 16) & 0xFFFF, value & 0xFFFF)

    def __str__(self) -> str:
        return f"{self.source_node}:{self.serial}"


@dataclass
class Packet:
    id: PacketId
    destination: int
    created_at: float
    payload_len: int = DEFAULT_PAYLOAD_LEN


class Strategy(Enum):
    A = "A"
    B = "B"
    C = "C"


@dataclass(frozen=True)
class StrategyConfig:
    """Which filters a node advertises and how they are sized.

    window_n sizes the main filter (reception log for A/B, buffer contents
    for C), small_n the per-packet delta filter (B/C only) and received_j
    the delivered-ids filter (advertised under C only).
    """

    kind: Strategy
    window_n: int
    small_n: int = DEFAULT_SMALL_N
    received_j: int = DEFAULT_RECEIVED_J
    p_target: float = DEFAULT_P_TARGET

    @classmethod
    def defaults(cls, kind: Strategy, buffer_capacity: int = DEFAULT_BUFFER_CAPACITY,
                 p_target: float = DEFAULT_P_TARGET) -> "StrategyConfig":
        """Per-strategy default sizes for a given buffer capacity."""
        if kind is Strategy.A:
            return cls(kind, window_n=50, p_target=p_target)
        if kind is Strategy.B:
            return cls(kind, window_n=200, p_target=p_target)
        return cls(kind, window_n=min(50, buffer_capacity), p_target=p_target)

    def validate(self, buffer_capacity: int) -> None:
        if self.window_n < 1:
            raise ValueError(f"window_n must be >= 1, got {self.window_n}")
        if not 0.0 < self.p_target < 1.0:
            raise ValueError(f"p_target must be in (0, 1), got {self.p_target}")
        if self.kind in (Strategy.B, Strategy.C):
            if not 0 < self.small_n < self.window_n:
                raise ValueError(
                    f"small_n={self.small_n} must satisfy 0 < small_n < window_n={self.window_n}"
                )
        if self.kind is Strategy.C:
            if self.window_n > buffer_capacity:
                raise ValueError(
                    f"strategy C window_n={self.window_n} may not exceed "
                    f"buffer capacity {buffer_capacity}"
                )
            if self.received_j < 1:
                raise ValueError(f"received_j must be >= 1, got {self.received_j}")


@dataclass
class NeighborRecord:
    """What this node knows about one live neighbor."""

    neighbor_id: int
    big_filter: Optional[BloomFilter] = None
    small_filter: Optional[BloomFilter] = None
    received_filter: Optional[BloomFilter] = None
    not_received_yet: List[PacketId] = field(default_factory=list)
    last_heard: float = 0.0
    # Arrival index of the newest buffered packet already screened for this
    # neighbor; packets above it still need screening.
    last_forward_mark: int = 0


@dataclass
class BeaconMessage:
    """Periodic presence announcement carrying the strategy's filter(s)."""

    sender: int
    filters: Tuple[BloomFilter, ...]

    def encoded_size(self) -> int:
        return 4 + sum(f.encoded_size() for f in self.filters)

    def encode(self) -> bytes:
        head = struct.pack(">BHB", BEACON_TYPE, self.sender, len(self.filters))
        return head + b"".join(f.encode() for f in self.filters)


@dataclass
class DataMessage:
    """Unicast packet hand-off, optionally piggybacking a filter."""

    sender: int
    receiver: int
    packet: Packet
    piggyback: Optional[BloomFilter] = None

    _HEAD = struct.Struct(">BHHIHIHB")  # 18 bytes before the optional block

    def encoded_size(self) -> int:
        size = self._HEAD.size + self.packet.payload_len
        if self.piggyback is not None:
            size += self.piggyback.encoded_size()
        return size

    def encode(self) -> bytes:
        pkt = self.packet
        head = self._HEAD.pack(
            DATA_TYPE,
            self.sender,
            self.receiver,
            pkt.id.value,
            pkt.destination,
            int(round(pkt.created_at * 1000.0)) & 0xFFFFFFFF,
            pkt.payload_len,
            0 if self.piggyback is None else 1,
        )
        block = b"" if self.piggyback is None else self.piggyback.encode()
        return head + block + bytes(pkt.payload_len)


def _decode_filter_blocks(data: bytes, offset: int, count: int):
    filters = []
    for _ in range(count):
        if len(data) < offset + 2:
            raise MalformedMessageError("truncated filter block header")
        m_bits = struct.unpack_from(">H", data, offset)[0]
        if m_bits == 0 or m_bits % 8 != 0:
            raise MalformedMessageError(f"bad vector length {m_bits} in filter block")
        end = offset + 7 + m_bits // 8
        if len(data) < end:
            raise MalformedMessageError("truncated filter block")
        filters.append(BloomFilter.decode(data[offset:end]))
        offset = end
    return filters, offset


def decode_message(data: bytes):
    """Decode one wire message into a BeaconMessage or DataMessage."""
    if not data:
        raise MalformedMessageError("empty message")
    mtype = data[0]
    if mtype == BEACON_TYPE:
        if len(data) < 4:
            raise MalformedMessageError("beacon shorter than its header")
        sender, count = struct.unpack_from(">HB", data, 1)
        if count not in (1, 2):
            raise MalformedMessageError(f"beacon filter count {count} not in (1, 2)")
        filters, offset = _decode_filter_blocks(data, 4, count)
        if offset != len(data):
            raise MalformedMessageError("trailing bytes after beacon filters")
        return BeaconMessage(sender, tuple(filters))
    if mtype == DATA_TYPE:
        head = DataMessage._HEAD
        if len(data) < head.size:
            raise MalformedMessageError("data message shorter than its header")
        (_, sender, receiver, pid_value, destination,
         created_ms, payload_len, flag) = head.unpack_from(data)
        offset = head.size
        piggyback = None
        if flag == 1:
            blocks, offset = _decode_filter_blocks(data, offset, 1)
            piggyback = blocks[0]
        elif flag != 0:
            raise MalformedMessageError(f"bad piggyback flag {flag}")
        if len(data) != offset + payload_len:
            raise MalformedMessageError("payload length disagrees with message size")
        pkt = Packet(PacketId.from_value(pid_value), destination,
                     created_ms / 1000.0, payload_len)
        return DataMessage(sender, receiver, pkt, piggyback)
    raise MalformedMessageError(f"unknown message type 0x{mtype:02x}")


@dataclass(frozen=True)
class ProtocolAction:
    """What a message handler did, for the caller's accounting.

    kind is one of: delivered, relayed, redundant, ack_removed, evicted,
    malformed.
    """

    kind: str
    packet_id: Optional[PacketId] = None
    packet: Optional[Packet] = None


class NodeState:
    """The complete forwarding state machine of one node.

    All mutation happens through the four entry points the simulation engine
    drives: :meth:`make_beacon`, :meth:`handle_message`,
    :meth:`expire_neighbors` and :meth:`select_transmission`
    (plus :meth:`mint_packet` for externally timed sources).  Everything is
    deterministic given the construction seed.
    """

    def __init__(
        self,
        node_id: int,
        strategy: StrategyConfig,
        buffer_capacity: int = DEFAULT_BUFFER_CAPACITY,
        beacon_interval: float = 1.0,
        payload_len: int = DEFAULT_PAYLOAD_LEN,
        peer_ids: Tuple[int, ...] = (),
        rng_seed: int = 0,
        greedy_source: bool = False,
        oracle: Optional[Callable[[int, PacketId], bool]] = None,
        unbounded_windows: bool = False,
    ):
        strategy.validate(buffer_capacity)
        self.node_id = node_id & 0xFFFF
        self.strategy = strategy
        self.buffer_capacity = buffer_capacity
        self.beacon_interval = beacon_interval
        self.disconnection_timeout = DISCONNECT_FACTOR * beacon_interval
        self.payload_len = payload_len
        self.peer_ids = tuple(sorted(p for p in peer_ids if p != node_id))
        self.rng = Random(rng_seed)
        self.greedy_source = greedy_source
        # When set, screening consults oracle(neighbor_id, packet_id) instead
        # of the stored filters (debug/diagnostic mode).
        self.oracle = oracle

        self.buffer: List[Tuple[int, Packet]] = []  # (arrival index, packet), FIFO
        self.buffer_seq = 0
        self._buffered: Dict[PacketId, Packet] = {}

        self._log_cap = None if unbounded_windows else strategy.window_n
        self.reception_log: deque = deque()
        self._log_set: set = set()

        self._dest_cap = None if unbounded_windows else strategy.received_j
        self.dest_received: deque = deque()
        self._dest_set: set = set()

        self.delta_ids: deque = deque()  # ids received since our last beacon

        self.neighbors: Dict[int, NeighborRecord] = {}
        self.serial_counter = 0

        self.seed = derive_hash_family(self.node_id)
        self._window_params = optimize_params(strategy.window_n, strategy.p_target)
        self._small_params = (
            optimize_params(strategy.small_n, strategy.p_target)
            if strategy.kind in (Strategy.B, Strategy.C) else None
        )
        self._received_params = (
            optimize_params(strategy.received_j, strategy.p_target)
            if strategy.kind is Strategy.C else None
        )
        self._window_filter: Optional[BloomFilter] = None
        self._window_dirty = True

    # -- filter construction -------------------------------------------------

    def _filter_over(self, ids, params: BloomParams) -> BloomFilter:
        f = BloomFilter(params, self.seed)
        for pid in ids:
            f.insert(pid.value)
        return f

    def _current_window_filter(self) -> BloomFilter:
        if self._window_dirty or self._window_filter is None:
            self._window_filter = self._filter_over(self.reception_log, self._window_params)
            self._window_dirty = False
        return self._window_filter

    def _delta_filter(self) -> BloomFilter:
        return self._filter_over(self.delta_ids, self._small_params)

    # -- bookkeeping helpers -------------------------------------------------

    def _log_append(self, pid: PacketId) -> None:
        self.reception_log.append(pid)
        self._log_set.add(pid)
        if self._log_cap is not None and len(self.reception_log) > self._log_cap:
            old = self.reception_log.popleft()
            self._log_set.discard(old)
        self._window_dirty = True

    def _delta_append(self, pid: PacketId) -> None:
        if self.strategy.kind is Strategy.A:
            return
        self.delta_ids.append(pid)
        if len(self.delta_ids) > self.strategy.small_n:
            self.delta_ids.popleft()

    def _purge_from_neighbors(self, pid: PacketId) -> None:
        for rec in self.neighbors.values():
            if pid in rec.not_received_yet:
                rec.not_received_yet.remove(pid)

    def _remove_from_buffer(self, pid: PacketId) -> None:
        if pid not in self._buffered:
            return
        del self._buffered[pid]
        for i, (_, pkt) in enumerate(self.buffer):
            if pkt.id == pid:
                del self.buffer[i]
                break
        self._purge_from_neighbors(pid)

    def _mark_dest_received(self, pid: PacketId) -> None:
        """Record a confirmed delivery; the buffer never holds delivered ids."""
        if pid in self._dest_set:
            return
        self.dest_received.append(pid)
        self._dest_set.add(pid)
        if self._dest_cap is not None and len(self.dest_received) > self._dest_cap:
            old = self.dest_received.popleft()
            self._dest_set.discard(old)
        self._remove_from_buffer(pid)

    # -- spec operations -----------------------------------------------------

    def buffer_insert(self, pkt: Packet) -> Optional[PacketId]:
        """FIFO-buffer a packet; returns the evicted id when the buffer was full."""
        if pkt.id in self._buffered:
            raise ValueError(f"packet {pkt.id} already buffered")
        if pkt.id in self._dest_set:
            raise ValueError(f"packet {pkt.id} already delivered to its destination")
        evicted = None
        if len(self.buffer) >= self.buffer_capacity:
            _, old = self.buffer.pop(0)
            del self._buffered[old.id]
            self._purge_from_neighbors(old.id)
            evicted = old.id
        self.buffer_seq += 1
        self.buffer.append((self.buffer_seq, pkt))
        self._buffered[pkt.id] = pkt
        return evicted

    def mint_packet(self, now: float, destination: Optional[int] = None) -> Packet:
        """Create a new self-sourced packet and take custody of it."""
        if destination is None:
            if not self.peer_ids:
                raise ValueError("cannot mint a packet with no peers to address")
            destination = self.rng.choice(self.peer_ids)
        pid = PacketId(self.node_id, self.serial_counter & 0xFFFF)
        self.serial_counter += 1
        pkt = Packet(pid, destination, now, self.payload_len)
        self.buffer_insert(pkt)
        # Own packets count as received so our filters advertise them.
        self._log_append(pid)
        self._delta_append(pid)
        return pkt

    def make_beacon(self, now: float) -> BeaconMessage:
        """Build this node's beacon and reset the delta window."""
        kind = self.strategy.kind
        if kind is Strategy.C:
            filters = (
                self._filter_over((pkt.id for _, pkt in self.buffer), self._window_params),
                self._filter_over(self.dest_received, self._received_params),
            )
        else:
            filters = (self._current_window_filter(),)
        self.delta_ids.clear()
        return BeaconMessage(self.node_id, filters)

    def _neighbor_reports_received(self, rec: NeighborRecord, pid: PacketId) -> bool:
        if self.oracle is not None:
            return self.oracle(rec.neighbor_id, pid)
        value = pid.value
        if rec.small_filter is not None and rec.small_filter.query(value):
            return True
        if rec.big_filter is not None and rec.big_filter.query(value):
            return True
        if rec.received_filter is not None and rec.received_filter.query(value):
            return True
        return False

    def _ensure_neighbor(self, sender: int, now: float) -> NeighborRecord:
        rec = self.neighbors.get(sender)
        if rec is None:
            rec = NeighborRecord(neighbor_id=sender)
            self.neighbors[sender] = rec
        rec.last_heard = now
        return rec

    def handle_message(self, msg, now: float) -> List[ProtocolAction]:
        """Process one received message; returns actions for accounting."""
        actions: List[ProtocolAction] = []
        if isinstance(msg, BeaconMessage):
            rec = self._ensure_neighbor(msg.sender, now)
            rec.big_filter = msg.filters[0]
            rec.received_filter = msg.filters[1] if len(msg.filters) > 1 else None
            rec.small_filter = None  # sender reset its delta at beacon time
            actions.extend(self._apply_ack_and_rebuild(rec))
            return actions

        if isinstance(msg, DataMessage):
            rec = self._ensure_neighbor(msg.sender, now)
            if msg.piggyback is not None:
                if self.strategy.kind is Strategy.A:
                    rec.big_filter = msg.piggyback
                else:
                    rec.small_filter = msg.piggyback
                rec.not_received_yet = [
                    pid for pid in rec.not_received_yet
                    if not msg.piggyback.query(pid.value)
                ]
            actions.extend(self._accept_packet(msg.packet, now))
            return actions

        return [ProtocolAction("malformed")]

    def _apply_ack_and_rebuild(self, rec: NeighborRecord) -> List[ProtocolAction]:
        """After fresh neighbor filters: infer deliveries, then rebuild its queue."""
        actions = []
        use_c_ack = self.strategy.kind is Strategy.C and self.oracle is None
        for _, pkt in list(self.buffer):
            acked = False
            if pkt.destination == rec.neighbor_id and self._neighbor_reports_received(rec, pkt.id):
                acked = True
            elif use_c_ack and rec.received_filter is not None and rec.received_filter.query(pkt.id.value):
                acked = True
            if acked:
                self._mark_dest_received(pkt.id)
                actions.append(ProtocolAction("ack_removed", packet_id=pkt.id))
        rec.not_received_yet = [
            pkt.id for _, pkt in self.buffer
            if not self._neighbor_reports_received(rec, pkt.id)
        ]
        rec.last_forward_mark = self.buffer_seq
        return actions

    def _accept_packet(self, pkt: Packet, now: float) -> List[ProtocolAction]:
        pid = pkt.id
        if pid in self._log_set or pid in self._buffered or pid in self._dest_set:
            return [ProtocolAction("redundant", packet_id=pid)]
        if pkt.destination == self.node_id:
            self._log_append(pid)
            self._delta_append(pid)
            self._mark_dest_received(pid)
            return [ProtocolAction("delivered", packet_id=pid, packet=pkt)]
        actions = []
        evicted = self.buffer_insert(pkt)
        self._log_append(pid)
        self._delta_append(pid)
        actions.append(ProtocolAction("relayed", packet_id=pid, packet=pkt))
        if evicted is not None:
            actions.append(ProtocolAction("evicted", packet_id=evicted))
        return actions

    def expire_neighbors(self, now: float) -> List[int]:
        """Drop neighbors silent for longer than the disconnection timeout."""
        stale = [
            nid for nid, rec in self.neighbors.items()
            if now - rec.last_heard > self.disconnection_timeout
        ]
        for nid in stale:
            del self.neighbors[nid]
        return stale

    def _screen_new_arrivals(self, rec: NeighborRecord) -> None:
        if rec.last_forward_mark >= self.buffer_seq:
            return
        for seq, pkt in self.buffer:
            if seq <= rec.last_forward_mark:
                continue
            if not self._neighbor_reports_received(rec, pkt.id):
                rec.not_received_yet.append(pkt.id)
        rec.last_forward_mark = self.buffer_seq

    def select_transmission(self, now: float):
        """Pick (neighbor, DataMessage) for an idle transmitter, or None.

        Neighbors that are the destination of a queued packet get priority;
        otherwise the choice is uniform over neighbors with a non-empty
        queue.  Destination-bound packets go out first (oldest first); relay
        packets are picked uniformly.  A greedy source with an all-empty
        queue mints a new packet instead of going idle.
        """
        if not self.neighbors:
            return None
        for attempt in (0, 1):
            ordered = sorted(self.neighbors)
            for nid in ordered:
                self._screen_new_arrivals(self.neighbors[nid])
            if self.oracle is not None:
                # Live re-validation: knowledge may have advanced since screening.
                for nid in ordered:
                    rec = self.neighbors[nid]
                    rec.not_received_yet = [
                        pid for pid in rec.not_received_yet if not self.oracle(nid, pid)
                    ]
            chosen = self._choose_neighbor(ordered)
            if chosen is not None:
                break
            if attempt == 0 and self.greedy_source and self.peer_ids:
                self.mint_packet(now)
                continue
            return None
        rec = self.neighbors[chosen]
        pid = self._choose_packet(rec)
        rec.not_received_yet.remove(pid)
        if self.strategy.kind is Strategy.A:
            piggyback = self._current_window_filter()
        else:
            piggyback = self._delta_filter()
        pkt = self._buffered[pid]
        return chosen, DataMessage(self.node_id, chosen, pkt, piggyback)

    def _choose_neighbor(self, ordered: List[int]) -> Optional[int]:
        for nid in ordered:  # destination priority, lowest id wins ties
            rec = self.neighbors[nid]
            if any(self._buffered[pid].destination == nid for pid in rec.not_received_yet):
                return nid
        candidates = [nid for nid in ordered if self.neighbors[nid].not_received_yet]
        if not candidates:
            return None
        return self.rng.choice(candidates)

    def _choose_packet(self, rec: NeighborRecord) -> PacketId:
        bound = [
            pid for pid in rec.not_received_yet
            if self._buffered[pid].destination == rec.neighbor_id
        ]
        if bound:
            return min(bound, key=lambda pid: (self._buffered[pid].created_at, pid))
        return self.rng.choice(rec.not_received_yet)

    # -- diagnostics ---------------------------------------------------------

    def check_invariants(self) -> None:
        """Assert structural invariants; used by the engine's debug mode."""
        assert len(self.buffer) <= self.buffer_capacity
        buffered = set(self._buffered)
        for rec in self.neighbors.values():
            assert set(rec.not_received_yet) <= buffered, "queue references unbuffered packet"
        assert not (buffered & self._dest_set), "buffer holds a delivered packet"
        if self._log_cap is not None:
            assert len(self.reception_log) <= self._log_cap
        if self._dest_cap is not None:
            assert len(self.dest_received) <= self._dest_cap
        assert len(self.delta_ids) <= self.strategy.small_n or self.strategy.kind is Strategy.A
