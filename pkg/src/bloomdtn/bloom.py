"""Bloom filters for buffer-summary exchange between mobile nodes.

A node advertises the set of packet ids it holds (or has seen) as a fixed
size membership vector instead of an explicit id list.  Anyone who knows the
owner's 16-bit node id can re-derive the owner's hash family, so the only
bytes on the wire are a small header plus the vector itself.

Sizing follows the classic optimum: for ``n`` values and a target
false-alarm probability ``p`` the minimal vector length is
``m = -n*ln(p)/(ln 2)**2`` with ``k = (m/n)*ln 2`` hash functions.  Vectors
are rounded up to whole bytes and ``k`` is recomputed from the rounded
length, then rounded to the nearest integer (minimum 1).

Hashing is double hashing over a 64-bit avalanche mixer with pinned
constants, so index sequences are identical across platforms and process
restarts.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import List, Optional

__all__ = [
    "BloomParams",
    "HashFamilySeed",
    "BloomFilter",
    "MalformedBlockError",
    "optimize_params",
    "raw_vector_size",
    "derive_hash_family",
    "index_set",
    "mix64",
]

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15

# Largest multiple of 8 representable in the 16-bit length header.
MAX_M_BITS = 65528

HEADER_LEN = 7
_HEADER = struct.Struct(">HBHH")  # m_bits, k_hashes, inserted_count, owner id


class MalformedBlockError(ValueError):
    """Raised when a serialized filter block cannot be decoded."""


def mix64(z: int) -> int:
    """64-bit avalanche finalizer (pinned constants, wraps mod 2**64)."""
    z &= _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


@dataclass(frozen=True)
class BloomParams:
    """Sizing result: capacity, target false-alarm rate, vector geometry.

    ``n_capacity`` and ``p_target`` are sizing metadata; they are not carried
    on the wire, so filters decoded from bytes have them set to None.
    """

    n_capacity: Optional[int]
    p_target: Optional[float]
    m_bits: int
    k_hashes: int

    def __post_init__(self) -> None:
        if self.m_bits <= 0 or self.m_bits % 8 != 0:
            raise ValueError(f"m_bits must be a positive multiple of 8, got {self.m_bits}")
        if self.k_hashes < 1:
            raise ValueError(f"k_hashes must be >= 1, got {self.k_hashes}")
        if self.n_capacity is not None and self.p_target is not None:
            needed = math.ceil(raw_vector_size(self.n_capacity, self.p_target)[0])
            if self.m_bits < needed:
                raise ValueError(
                    f"m_bits={self.m_bits} undersized for n={self.n_capacity}, "
                    f"p={self.p_target} (needs >= {needed})"
                )

    @property
    def m_bytes(self) -> int:
        return self.m_bits // 8


@dataclass(frozen=True)
class HashFamilySeed:
    """Per-node hash family: two 64-bit keys derived from the node id."""

    node_id: int
    key1: int
    key2: int


def raw_vector_size(n_capacity: int, p_target: float) -> tuple:
    """Un-rounded vector length in bits and hash count for (n, p).

    Returns the exact real-valued optimum before byte alignment; use
    :func:`optimize_params` for the wire-ready geometry.
    """
    if n_capacity < 1:
        raise ValueError(f"n_capacity must be >= 1, got {n_capacity}")
    if not 0.0 < p_target < 1.0:
        raise ValueError(f"p_target must be in (0, 1), got {p_target}")
    ln2 = math.log(2.0)
    m = -n_capacity * math.log(p_target) / (ln2 * ln2)
    k = (m / n_capacity) * ln2
    return m, k


def optimize_params(n_capacity: int, p_target: float) -> BloomParams:
    """Size a filter for ``n_capacity`` values at false-alarm rate ``p_target``.

    The vector length is rounded up to the next multiple of 8 and the hash
    count recomputed from the rounded length, rounded to nearest (min 1).
    """
    m_raw, _ = raw_vector_size(n_capacity, p_target)
    m_bits = int(math.ceil(m_raw / 8.0)) * 8
    if m_bits > MAX_M_BITS:
        raise ValueError(
            f"filter of {m_bits} bits exceeds the {MAX_M_BITS}-bit wire limit"
        )
    k_hashes = max(1, round((m_bits / n_capacity) * math.log(2.0)))
    return BloomParams(n_capacity, p_target, m_bits, k_hashes)


def derive_hash_family(node_id: int) -> HashFamilySeed:
    """Derive the two hash keys a node uses, purely from its 16-bit id."""
    key1 = mix64(node_id & 0xFFFF)
    key2 = mix64(((node_id & 0xFFFF) + _GOLDEN64) & _MASK64)
    return HashFamilySeed(node_id & 0xFFFF, key1, key2)


def index_set(params: BloomParams, seed: HashFamilySeed, value: int) -> List[int]:
    """The k bit positions a 32-bit value maps to under this (params, seed).

    Double hashing: ``h1 + i*h2 (mod m)`` with ``h2`` forced odd.
    """
    h1 = mix64((value ^ seed.key1) & _MASK64)
    h2 = mix64((value ^ seed.key2) & _MASK64) | 1
    m = params.m_bits
    return [(h1 + i * h2) % m for i in range(params.k_hashes)]


# Membership masks are pure functions of (keys, geometry, value); caching them
# makes filter rebuilds in a long simulation run cheap.
_mask_cache: dict = {}


def _membership_mask(m_bits: int, k_hashes: int, seed: HashFamilySeed, value: int) -> int:
    family = (seed.key1, seed.key2, m_bits, k_hashes)
    per_value = _mask_cache.get(family)
    if per_value is None:
        per_value = _mask_cache[family] = {}
    mask = per_value.get(value)
    if mask is None:
        h1 = mix64((value ^ seed.key1) & _MASK64)
        h2 = mix64((value ^ seed.key2) & _MASK64) | 1
        mask = 0
        for i in range(k_hashes):
            mask |= 1 << ((h1 + i * h2) % m_bits)
        per_value[value] = mask
    return mask


def clear_mask_cache() -> None:
    """Drop memoized membership masks (mainly for long-lived processes/tests)."""
    _mask_cache.clear()


@dataclass
class BloomFilter:
    """Membership vector plus the geometry and hash family that built it.

    The vector is held as an arbitrary-precision int: bit ``i`` of the vector
    is ``(bits >> i) & 1``, which serializes LSB-first within each byte.
    """

    params: BloomParams
    seed: HashFamilySeed
    bits: int = 0
    inserted_count: int = 0

    @classmethod
    def for_node(cls, node_id: int, n_capacity: int, p_target: float) -> "BloomFilter":
        """Fresh, empty filter sized for (n, p) and keyed to ``node_id``."""
        return cls(optimize_params(n_capacity, p_target), derive_hash_family(node_id))

    def insert(self, value: int) -> None:
        """Insert a 32-bit value; over-capacity inserts only degrade p."""
        self.bits |= _membership_mask(
            self.params.m_bits, self.params.k_hashes, self.seed, value
        )
        self.inserted_count += 1

    def query(self, value: int) -> bool:
        """True if the value may have been inserted; never a false negative."""
        mask = _membership_mask(
            self.params.m_bits, self.params.k_hashes, self.seed, value
        )
        return (self.bits & mask) == mask

    def __contains__(self, value: int) -> bool:
        return self.query(value)

    def popcount(self) -> int:
        return bin(self.bits).count("1")

    def encode(self) -> bytes:
        """Serialize to the wire block: 7-byte header + vector bytes.

        Header is big-endian (m_bits u16, k_hashes u8, inserted_count u16,
        owner node id u16); vector bytes are LSB-first within each byte.
        """
        header = _HEADER.pack(
            self.params.m_bits,
            self.params.k_hashes,
            min(self.inserted_count, 0xFFFF),
            self.seed.node_id,
        )
        return header + self.bits.to_bytes(self.params.m_bytes, "little")

    @classmethod
    def decode(cls, block: bytes) -> "BloomFilter":
        """Parse a wire block; the hash family is re-derived from the owner id."""
        if len(block) < HEADER_LEN:
            raise MalformedBlockError(f"block of {len(block)} bytes is shorter than the header")
        m_bits, k_hashes, inserted_count, node_id = _HEADER.unpack_from(block)
        if m_bits == 0 or m_bits % 8 != 0:
            raise MalformedBlockError(f"vector length {m_bits} is not a positive multiple of 8")
        if len(block) != HEADER_LEN + m_bits // 8:
            raise MalformedBlockError(
                f"block length {len(block)} != {HEADER_LEN + m_bits // 8} implied by header"
            )
        if k_hashes < 1:
            raise MalformedBlockError("k_hashes must be >= 1")
        params = BloomParams(None, None, m_bits, k_hashes)
        bits = int.from_bytes(block[HEADER_LEN:], "little")
        return cls(params, derive_hash_family(node_id), bits, inserted_count)

    def encoded_size(self) -> int:
        return HEADER_LEN + self.params.m_bytes

    def __eq__(self, other: object) -> bool:
        # Wire-observable identity; n_capacity/p_target are local metadata.
        if not isinstance(other, BloomFilter):
            return NotImplemented
        return (
            self.params.m_bits == other.params.m_bits
            and self.params.k_hashes == other.params.k_hashes
            and self.seed == other.seed
            and self.bits == other.bits
            and self.inserted_count == other.inserted_count
        )
