"""Bloom-filter summary exchange for epidemic forwarding in DTNs.

Library layout:

* :mod:`bloomdtn.bloom` - sized Bloom filters with per-node hash families
  and a byte-exact wire block.
* :mod:`bloomdtn.protocol` - the per-node forwarding state machine
  (buffer, neighbors, acknowledgment list, strategies A/B/C, scheduler).
* :mod:`bloomdtn.mobility` - random-waypoint walks, taxicab GPS traces and
  the disk-range predicate.
* :mod:`bloomdtn.simengine` - deterministic discrete-event loop and metrics.
* :mod:`bloomdtn.config` / :mod:`bloomdtn.cli` - scenario files and the
  ``bloomdtn`` command.
"""

from .bloom import (
    BloomFilter,
    BloomParams,
    HashFamilySeed,
    MalformedBlockError,
    derive_hash_family,
    index_set,
    optimize_params,
    raw_vector_size,
)
from .config import ChannelConfig, ConfigError, ScenarioConfig, parse_config
from .mobility import (
    Position,
    RwpConfig,
    RwpTrack,
    TraceSet,
    in_range,
    load_traces,
    rwp_position,
    trace_position,
)
from .protocol import (
    BeaconMessage,
    DataMessage,
    MalformedMessageError,
    NeighborRecord,
    NodeState,
    Packet,
    PacketId,
    Strategy,
    StrategyConfig,
    decode_message,
)
from .simengine import (
    Metrics,
    MetricsReport,
    efficiency_sweep,
    run,
    strategy_compare,
    transmission_duration,
)

__version__ = "0.1.0"
