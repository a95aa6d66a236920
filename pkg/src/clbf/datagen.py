"""Synthetic relations and labeled wildcard samples for training and evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bloom import WILDCARD, Token
from .nn import stratified_split

AIRPLANE = [6887, 8021, 8046, 6537, 2557, 5017, 1663]
DMV = [5, 10001, 27, 1627, 27, 1570, 64, 107, 694, 40, 8, 1509, 346, 966, 794, 102, 3, 3, 2]
BUILTIN_SPECS = {"airplane": AIRPLANE, "dmv": DMV}


class DataError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    distinct_counts: list[int]
    rows: int = 10_000
    seed: int = 0
    distribution: str = "uniform"
    zipf_s: float = 1.2
    cover_domain: bool = True
    """Place every value at least once when there are enough rows."""

    def __post_init__(self):
        if not self.distinct_counts or any(v < 1 for v in self.distinct_counts):
            raise DataError("distinct counts must be >= 1")
        if self.rows < 1:
            raise DataError("rows must be >= 1")
        if self.distribution not in ("uniform", "zipf"):
            raise DataError(f"unknown distribution {self.distribution!r}")

    @classmethod
    def builtin(cls, name: str, **kw) -> "SyntheticSpec":
        try:
            counts = BUILTIN_SPECS[name]
        except KeyError:
            raise DataError(f"unknown synthetic spec {name!r}; choose from {sorted(BUILTIN_SPECS)}") from None
        return cls(list(counts), **kw)


@dataclass
class Relation:
    columns: list[str]
    rows: list[tuple[str, ...]]

    @property
    def arity(self) -> int:
        return len(self.columns)

    def column(self, i: int) -> list[str]:
        return [r[i] for r in self.rows]

    def distinct_counts(self) -> list[int]:
        return [len(set(self.column(i))) for i in range(self.arity)]

    def domains(self) -> list[list[str]]:
        """Distinct values per column, first-appearance order."""
        return [list(dict.fromkeys(self.column(i))) for i in range(self.arity)]


def generate_relation(spec: SyntheticSpec) -> Relation:
    rng = np.random.default_rng(spec.seed)
    cols = []
    for i, v in enumerate(spec.distinct_counts):
        if spec.distribution == "uniform":
            ids = rng.integers(0, v, size=spec.rows)
        else:
            w = 1.0 / np.arange(1, v + 1) ** spec.zipf_s
            ids = rng.choice(v, size=spec.rows, p=w / w.sum())
        if spec.cover_domain and spec.rows >= v:
            slots = rng.choice(spec.rows, size=v, replace=False)
            ids[slots] = rng.permutation(v)
        cols.append([f"c{i}_{x}" for x in ids])
    names = [f"c{i}" for i in range(len(cols))]
    return Relation(names, list(zip(*cols)))


# -- exact membership oracle -------------------------------------------------


class SubsetIndex:
    """Exact answer to "does some stored row match this wildcard pattern"."""

    def __init__(self, relation: Relation):
        self.arity = relation.arity
        self.postings: list[dict[str, set[int]]] = [dict() for _ in range(self.arity)]
        for r, row in enumerate(relation.rows):
            for i, tok in enumerate(row):
                self.postings[i].setdefault(tok, set()).add(r)

    def matches(self, pattern: Sequence[Token]) -> bool:
        lists = []
        for i, tok in enumerate(pattern):
            if tok is WILDCARD:
                continue
            rows = self.postings[i].get(tok)
            if not rows:
                return False
            lists.append(rows)
        if not lists:
            return True
        lists.sort(key=len)
        acc = lists[0]
        for other in lists[1:]:
            acc = acc & other
            if not acc:
                return False
        return True


# -- sampling ----------------------------------------------------------------


def _wildcard(row: Sequence[str], prob: float, rng: np.random.Generator) -> tuple[Token, ...]:
    if prob <= 0:
        return tuple(row)
    while True:
        keep = rng.random(len(row)) >= prob
        if keep.any():
            return tuple(tok if k else WILDCARD for tok, k in zip(row, keep))


def sample_positives(relation: Relation, count: int, wildcard_prob: float = 0.2,
                     rng: Optional[np.random.Generator] = None) -> list[tuple[Token, ...]]:
    """Stored rows drawn with replacement, slots wildcarded independently."""
    if not 0 <= wildcard_prob < 1:
        raise DataError("wildcard_prob must lie in [0, 1)")
    rng = rng or np.random.default_rng(0)
    picks = rng.integers(0, len(relation.rows), size=count)
    return [_wildcard(relation.rows[p], wildcard_prob, rng) for p in picks]


def sample_negatives(relation: Relation, count: int, wildcard_prob: float = 0.2,
                     rng: Optional[np.random.Generator] = None,
                     index: Optional[SubsetIndex] = None,
                     window: int = 10_000, min_accept_rate: float = 1e-3) -> list[tuple[Token, ...]]:
    """Per-column values drawn independently from observed domains, kept only
    when no stored row matches the pattern."""
    if not 0 <= wildcard_prob < 1:
        raise DataError("wildcard_prob must lie in [0, 1)")
    rng = rng or np.random.default_rng(0)
    index = index or SubsetIndex(relation)
    domains = relation.domains()
    sizes = np.array([len(d) for d in domains])
    out: list[tuple[Token, ...]] = []
    attempts = accepted = 0
    while len(out) < count:
        picks = (rng.random(len(domains)) * sizes).astype(np.int64)
        cand = _wildcard([d[p] for d, p in zip(domains, picks)], wildcard_prob, rng)
        attempts += 1
        if not index.matches(cand):
            out.append(cand)
            accepted += 1
        if attempts >= window:
            if accepted < min_accept_rate * attempts:
                raise DataError("negative space too small")
            attempts = accepted = 0
    return out


@dataclass
class Dataset:
    tuples: list[tuple[Token, ...]]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.tuples)

    @property
    def positives(self) -> list[tuple[Token, ...]]:
        return [t for t, y in zip(self.tuples, self.labels) if y == 1]

    @property
    def negatives(self) -> list[tuple[Token, ...]]:
        return [t for t, y in zip(self.tuples, self.labels) if y == 0]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset([self.tuples[i] for i in idx], self.labels[idx])


@dataclass
class Workload:
    train: Dataset
    test: Dataset
    meta: dict = field(default_factory=dict)


def make_workload(relation: Relation, n_positive: int, n_negative: int,
                  wildcard_prob: float = 0.2, test_fraction: float = 0.2, seed: int = 0) -> Workload:
    """Labeled positives and negatives with a seeded, stratified train/test split."""
    rng = np.random.default_rng(seed)
    pos = sample_positives(relation, n_positive, wildcard_prob, rng)
    neg = sample_negatives(relation, n_negative, wildcard_prob, rng)
    labels = np.array([1] * len(pos) + [0] * len(neg), dtype=np.int64)
    data = Dataset(pos + neg, labels)
    tr, te = stratified_split(labels, test_fraction, rng)
    return Workload(data.subset(tr), data.subset(te),
                    {"n_positive": n_positive, "n_negative": n_negative,
                     "wildcard_prob": wildcard_prob, "seed": seed})


# -- CSV ---------------------------------------------------------------------


def write_csv(relation: Relation, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        w.writerow(relation.columns)
        w.writerows(relation.rows)


def read_csv(path: str | Path) -> Relation:
    """Read a header-first CSV; every row must match the header's arity."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header:
            raise DataError(f"{path}: empty header")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append(tuple(row))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Relation(header, rows)


def parse_tuple(text: str, wildcard: str = "?") -> tuple[Token, ...]:
    """Parse a comma-separated CLI tuple; the literal ``?`` is a wildcard."""
    row = next(csv.reader([text]))
    return tuple(WILDCARD if tok == wildcard else tok for tok in row)


__all__ = [
    "AIRPLANE", "DMV", "BUILTIN_SPECS", "DataError", "Dataset", "Relation", "SubsetIndex",
    "SyntheticSpec", "Workload", "generate_relation", "make_workload",
    "parse_tuple", "read_csv", "sample_negatives", "sample_positives", "write_csv",
]
