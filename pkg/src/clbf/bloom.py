"""Classic Bloom filter and multidimensional (wildcard subset) indexing.

Probe positions use double hashing ``(h1 + i * h2) mod m`` where ``h1, h2`` are
the two 64-bit halves of MurmurHash3 x64/128.  The same class backs both the
baseline multidimensional filter and the fixup filter of the learned variants.
"""

from __future__ import annotations

import io
import math
import struct
from typing import Iterable, Optional, Sequence

import mmh3
import numpy as np

MAGIC = b"CLBF"
VERSION = 1
ROLES = ("baseline", "fixup")

WILDCARD = None
"""Placeholder for an unspecified column in a query tuple."""

Token = Optional[str]
WildcardTuple = Sequence[Token]


class BloomError(ValueError):
    pass


def optimal_size(n: int, p: float) -> tuple[int, int]:
    """Return ``(m, h)`` for ``n`` elements at target false-positive rate ``p``."""
    if n < 1:
        raise BloomError("n must be >= 1")
    if not 0.0 < p < 1.0:
        raise BloomError("false-positive rate must lie in (0, 1)")
    m = math.ceil(-n * math.log(p) / math.log(2) ** 2)
    h = max(1, round(m / n * math.log(2)))
    return m, min(h, 64)


def hash_pairs(elements: Sequence[bytes], seed: int) -> np.ndarray:
    """The two 64-bit murmur halves of every element, shape ``(n, 2)``."""
    return np.array(
        [mmh3.hash64(e, seed & 0xFFFFFFFF, signed=False) for e in elements], dtype=np.uint64
    ).reshape(-1, 2)


class BloomFilter:
    def __init__(self, m: int, h: int, seed: int = 0, role: str = "baseline"):
        if m < 1:
            raise BloomError("m must be >= 1")
        if not 1 <= h <= 64:
            raise BloomError("h must lie in [1, 64]")
        if role not in ROLES:
            raise BloomError(f"unknown role {role!r}")
        self.m = int(m)
        self.h = int(h)
        self.seed = int(seed) & 0xFFFFFFFF
        self.role = role
        self.n_inserted = 0
        self.bits = np.zeros((self.m + 7) // 8, dtype=np.uint8)

    @classmethod
    def with_capacity(cls, n: int, p: float, seed: int = 0, role: str = "baseline") -> "BloomFilter":
        m, h = optimal_size(n, p)
        return cls(m, h, seed=seed, role=role)

    def __repr__(self) -> str:
        return f"BloomFilter(m={self.m}, h={self.h}, n_inserted={self.n_inserted}, role={self.role!r})"

    # -- probing -----------------------------------------------------------

    def _positions(self, element: bytes) -> list[int]:
        h1, h2 = mmh3.hash64(element, self.seed, signed=False)
        m = self.m
        return [(h1 + i * h2) % m for i in range(self.h)]

    def _positions_many(self, elements: Sequence[bytes]) -> np.ndarray:
        return self._positions_from_pairs(hash_pairs(elements, self.seed))

    def _positions_from_pairs(self, pairs: np.ndarray) -> np.ndarray:
        m = np.uint64(self.m)
        a = pairs[:, 0] % m
        b = pairs[:, 1] % m
        i = np.arange(self.h, dtype=np.uint64)
        # a + i*b stays below 65 * m, no uint64 overflow for any realistic m
        return (a[:, None] + i[None, :] * b[:, None]) % m

    def insert(self, element: bytes) -> None:
        bits = self.bits
        for pos in self._positions(element):
            bits[pos >> 3] |= 1 << (pos & 7)
        self.n_inserted += 1

    def contains(self, element: bytes) -> bool:
        bits = self.bits
        for pos in self._positions(element):
            if not bits[pos >> 3] & (1 << (pos & 7)):
                return False
        return True

    __contains__ = contains

    def insert_many(self, elements: Sequence[bytes]) -> None:
        if len(elements) == 0:
            return
        self.insert_hash_pairs(hash_pairs(elements, self.seed))

    def insert_hash_pairs(self, pairs: np.ndarray) -> None:
        """Insert elements given as precomputed ``hash_pairs(elements, self.seed)``."""
        if len(pairs) == 0:
            return
        pos = self._positions_from_pairs(pairs).ravel()
        np.bitwise_or.at(self.bits, (pos >> np.uint64(3)).astype(np.int64),
                         np.left_shift(1, pos & np.uint64(7)).astype(np.uint8))
        self.n_inserted += len(pairs)

    def contains_many(self, elements: Sequence[bytes]) -> np.ndarray:
        if len(elements) == 0:
            return np.zeros(0, dtype=bool)
        pos = self._positions_many(elements)
        byte = self.bits[(pos >> np.uint64(3)).astype(np.int64)]
        hit = (byte >> (pos & np.uint64(7)).astype(np.uint8)) & 1
        return hit.all(axis=1)

    # -- accounting --------------------------------------------------------

    def size_bits(self) -> int:
        return self.m

    def memory_mb(self) -> float:
        return self.m / 8 / 2**20

    def expected_fpr(self, n: int | None = None) -> float:
        n = self.n_inserted if n is None else n
        return (1.0 - math.exp(-self.h * n / self.m)) ** self.h

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        payload = self.bits.tobytes()
        header = struct.pack(
            "<4sHBQBIQQ",
            MAGIC,
            VERSION,
            ROLES.index(self.role),
            self.m,
            self.h,
            self.seed,
            self.n_inserted,
            len(payload),
        )
        return header + payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        return cls.read(io.BytesIO(data))

    @classmethod
    def read(cls, stream: io.BufferedIOBase) -> "BloomFilter":
        fmt = "<4sHBQBIQQ"
        raw = stream.read(struct.calcsize(fmt))
        if len(raw) != struct.calcsize(fmt):
            raise BloomError("truncated bloom filter header")
        magic, version, role, m, h, seed, n, nbytes = struct.unpack(fmt, raw)
        if magic != MAGIC:
            raise BloomError("bad magic")
        if version != VERSION:
            raise BloomError(f"unsupported version {version}")
        if nbytes != (m + 7) // 8:
            raise BloomError("bit array length does not match m")
        payload = stream.read(nbytes)
        if len(payload) != nbytes:
            raise BloomError("truncated bit array")
        bf = cls(m, h, seed=seed, role=ROLES[role])
        bf.bits = np.frombuffer(payload, dtype=np.uint8).copy()
        bf.n_inserted = n
        return bf


# -- multidimensional indexing ---------------------------------------------

_WILD = b"\xff"
_CONCRETE = b"\x01"


def encode_slot(i: int, tok: Token) -> bytes:
    if tok is WILDCARD:
        return _WILD
    raw = tok.encode("utf-8")
    return _CONCRETE + struct.pack("<HI", i, len(raw)) + raw


def serialize_tuple_subset(t: WildcardTuple) -> bytes:
    """Canonical byte encoding of a (possibly wildcarded) tuple.

    Arity, then per slot either a wildcard sentinel or the column index,
    token length and UTF-8 token bytes.
    """
    return struct.pack("<H", len(t)) + b"".join(encode_slot(i, tok) for i, tok in enumerate(t))


def is_all_wildcard(t: WildcardTuple) -> bool:
    return all(tok is WILDCARD for tok in t)


def apply_mask(t: Sequence[str], mask: int) -> tuple[Token, ...]:
    """Keep slot ``i`` when bit ``i`` of ``mask`` is set, wildcard it otherwise."""
    return tuple(tok if mask >> i & 1 else WILDCARD for i, tok in enumerate(t))


def subset_masks(k: int, budget: int | None = None, rng: np.random.Generator | None = None) -> list[int]:
    """Non-empty concrete-slot masks for arity ``k``.

    All ``2**k - 1`` masks when they fit the budget, otherwise ``budget``
    distinct masks drawn with ``rng``.
    """
    total = (1 << k) - 1
    if budget is None or total <= budget:
        return list(range(1, total + 1))
    if rng is None:
        raise BloomError("sampling subset masks needs an rng")
    picked = rng.choice(total, size=budget, replace=False) + 1
    return sorted(int(x) for x in picked)


def iter_tuple_subsets(t: Sequence[Token], masks: Iterable[int] | None = None) -> Iterable[tuple[Token, ...]]:
    if any(tok is WILDCARD for tok in t):
        raise BloomError("can only index concrete tuples")
    if masks is None:
        masks = range(1, 1 << len(t))
    return (apply_mask(t, mask) for mask in masks)


def index_tuple_subsets(
    bf: BloomFilter, t: Sequence[Token], masks: Iterable[int] | None = None
) -> int:
    """Insert every wildcard pattern of ``t`` that keeps at least one value.

    Returns the number of insertions.
    """
    encoded = [serialize_tuple_subset(s) for s in iter_tuple_subsets(t, masks)]
    bf.insert_many(encoded)
    return len(encoded)


def query_tuple(bf: BloomFilter, t: WildcardTuple) -> bool:
    if is_all_wildcard(t):
        raise BloomError("illegal query: all slots are wildcards")
    return bf.contains(serialize_tuple_subset(t))


def all_subsets(t: Sequence[str]) -> Iterable[tuple[Token, ...]]:
    """Every non-empty subset pattern of a concrete tuple, in mask order."""
    return (apply_mask(t, mask) for mask in range(1, 1 << len(t)))


__all__ = [
    "BloomError",
    "BloomFilter",
    "encode_slot",
    "hash_pairs",
    "WILDCARD",
    "all_subsets",
    "apply_mask",
    "index_tuple_subsets",
    "is_all_wildcard",
    "iter_tuple_subsets",
    "optimal_size",
    "query_tuple",
    "serialize_tuple_subset",
    "subset_masks",
]
