"""Dictionary encoding and lossless quotient/remainder subcolumn compression.

A column with ``v`` distinct values is dictionary-encoded to dense ids in
``[0, v)``.  Columns whose ``v`` exceeds the threshold ``theta`` are split into
``ns`` subcolumns: the id is divided by ``d = ceil(v ** (1/ns))``, the remainder
becomes the least significant subcolumn and the quotient range
``ceil(v / d)`` is split again with ``ns - 1`` subcolumns.  Subvalues are
ordered most significant first, so for ``ns = 2`` an id maps to
``[quotient, remainder]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union


class CodecError(ValueError):
    pass


def ceil_root(v: int, n: int) -> int:
    """Smallest integer ``d >= 1`` with ``d ** n >= v``."""
    if v <= 1:
        return 1
    d = max(1, int(round(v ** (1.0 / n))))
    while d ** n < v:
        d += 1
    while d > 1 and (d - 1) ** n >= v:
        d -= 1
    return d


@dataclass(frozen=True)
class Dictionary:
    column_name: str
    id_to_value: tuple[str, ...]
    value_to_id: Mapping[str, int] = field(repr=False, compare=False)

    @property
    def v(self) -> int:
        return len(self.id_to_value)

    def encode(self, token: str) -> int | None:
        """Id of ``token`` or None when it was never seen."""
        return self.value_to_id.get(token)

    def decode(self, idx: int) -> str:
        return self.id_to_value[idx]

    @classmethod
    def from_values(cls, column_name: str, id_to_value: Sequence[str]) -> "Dictionary":
        ids = tuple(id_to_value)
        mapping = {tok: i for i, tok in enumerate(ids)}
        if len(mapping) != len(ids):
            raise CodecError(f"duplicate tokens in dictionary {column_name!r}")
        return cls(column_name, ids, mapping)


def build_dictionary(column_values: Iterable[str], column_name: str = "") -> Dictionary:
    """Assign dense ids in first-appearance order."""
    mapping: dict[str, int] = {}
    order: list[str] = []
    for tok in column_values:
        if tok not in mapping:
            mapping[tok] = len(order)
            order.append(tok)
    if not order:
        raise CodecError("empty column")
    return Dictionary(column_name, tuple(order), mapping)


@dataclass(frozen=True)
class PassThrough:
    v: int

    @property
    def ns(self) -> int:
        return 1

    @property
    def subdims(self) -> tuple[int, ...]:
        return (self.v,)


@dataclass(frozen=True)
class Split:
    """``divisors`` are listed in the order they are applied to the id."""

    v: int
    ns: int
    divisors: tuple[int, ...]
    subdims: tuple[int, ...]


PlanEntry = Union[PassThrough, Split]


def split_column(v: int, ns: int) -> Split:
    if ns < 2:
        raise CodecError("ns must be >= 2")
    divisors: list[int] = []
    remainder_dims: list[int] = []
    max_vid = v
    for k in range(ns, 1, -1):
        d = ceil_root(max_vid, k)
        divisors.append(d)
        remainder_dims.append(d)
        max_vid = -(-max_vid // d)
    subdims = (max_vid, *reversed(remainder_dims))
    return Split(v, ns, tuple(divisors), subdims)


@dataclass(frozen=True)
class CompressionPlan:
    entries: tuple[PlanEntry, ...]
    theta: int

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> PlanEntry:
        return self.entries[i]

    @property
    def n_split(self) -> int:
        return sum(isinstance(e, Split) for e in self.entries)

    @property
    def subdims(self) -> list[int]:
        """Value-range size of every model input, column by column."""
        return [d for e in self.entries for d in e.subdims]

    def compress(self, ids: Sequence[int]) -> list[int]:
        out: list[int] = []
        for x, entry in zip(ids, self.entries, strict=True):
            out.extend(compress_value(x, entry))
        return out

    def decompress(self, subvalues: Sequence[int]) -> list[int]:
        ids, pos = [], 0
        for entry in self.entries:
            ids.append(decompress_value(subvalues[pos : pos + entry.ns], entry))
            pos += entry.ns
        if pos != len(subvalues):
            raise CodecError("subvalue count does not match plan")
        return ids


def identity_plan(schema: Sequence[int]) -> CompressionPlan:
    return CompressionPlan(tuple(PassThrough(v) for v in schema), theta=max(schema, default=0))


def plan_compression(
    schema: Sequence[int],
    theta: int = 3000,
    ns: int = 2,
    ns_overrides: Mapping[int, int] | None = None,
) -> CompressionPlan:
    """Split every column with ``v > theta`` into ``ns`` subcolumns.

    ``ns_overrides`` maps column index to a per-column subcolumn count.  A
    column is left whole when splitting would not shrink its value range
    (only happens for tiny ``v``).
    """
    if theta < 1:
        raise CodecError("theta must be >= 1")
    if ns < 2:
        raise CodecError("ns must be >= 2")
    overrides = dict(ns_overrides or {})
    entries: list[PlanEntry] = []
    for i, v in enumerate(schema):
        if v < 1:
            raise CodecError(f"column {i} has no values")
        if v > theta:
            s = split_column(v, overrides.get(i, ns))
            if sum(s.subdims) < v:
                entries.append(s)
                continue
        entries.append(PassThrough(v))
    return CompressionPlan(tuple(entries), theta)


def compress_value(x: int, entry: PlanEntry) -> list[int]:
    if not 0 <= x < entry.v:
        raise CodecError("id out of dictionary range")
    if isinstance(entry, PassThrough):
        return [x]
    remainders = []
    for d in entry.divisors:
        x, r = divmod(x, d)
        remainders.append(r)
    return [x, *reversed(remainders)]


def decompress_value(subvalues: Sequence[int], entry: PlanEntry) -> int:
    if len(subvalues) != entry.ns:
        raise CodecError(f"expected {entry.ns} subvalues, got {len(subvalues)}")
    for s, dim in zip(subvalues, entry.subdims):
        if not 0 <= s < dim:
            raise CodecError("subvalue out of range")
    if isinstance(entry, PassThrough):
        return subvalues[0]
    x = subvalues[0]
    for s, d in zip(subvalues[1:], reversed(entry.divisors)):
        x = x * d + s
    if x >= entry.v:
        raise CodecError("subvalues decode past the dictionary range")
    return x


def input_dimension(
    plan: CompressionPlan, *, paper_convention: bool = False, count_wildcards: bool = False
) -> int:
    """Total encoding vocabulary across model inputs.

    With ``paper_convention`` the quotient subcolumn of a split column is
    counted as its last divisor and one slot is dropped (``sv_d + sv_d - 1``
    for two subcolumns) instead of using the exact quotient range.
    ``count_wildcards`` adds the reserved wildcard slot of every input.
    """
    total = 0
    for entry in plan.entries:
        if isinstance(entry, Split) and paper_convention:
            total += sum(entry.divisors) + entry.divisors[-1] - 1
        else:
            total += sum(entry.subdims)
        if count_wildcards:
            total += entry.ns
    return total
