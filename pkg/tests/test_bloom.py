import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clbf.bloom import (
    WILDCARD,
    BloomError,
    BloomFilter,
    all_subsets,
    index_tuple_subsets,
    optimal_size,
    query_tuple,
    serialize_tuple_subset,
    subset_masks,
)

W = WILDCARD


def test_sizing_closed_form():
    m, h = optimal_size(5 * 10**6, 0.01)
    assert m == math.ceil(5e6 * math.log(100) / math.log(2) ** 2) == 47_925_292
    assert h == 7
    bf = BloomFilter.with_capacity(5 * 10**6, 0.01)
    assert bf.memory_mb() == pytest.approx(47_925_292 / 8 / 2**20)
    assert bf.memory_mb() == pytest.approx(5.713, abs=1e-3)


def test_sizing_single_element():
    # -ln(0.5) / ln(2)^2 = 1.44 -> 2 bits; round(2 ln 2) = 1 hash
    assert optimal_size(1, 0.5) == (2, 1)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_sizing_rejects_bad_rate(p):
    with pytest.raises(BloomError):
        BloomFilter.with_capacity(1000, p)


def test_constructor_limits():
    with pytest.raises(BloomError):
        BloomFilter(0, 1)
    with pytest.raises(BloomError):
        BloomFilter(10, 65)
    with pytest.raises(BloomError):
        BloomFilter(10, 0)


def test_insert_then_contains():
    bf = BloomFilter.with_capacity(100, 0.01)
    assert not bf.contains(b"x")
    bf.insert(b"x")
    assert bf.contains(b"x")
    assert b"x" in bf


def test_double_insert_idempotent():
    bf = BloomFilter.with_capacity(100, 0.01)
    bf.insert(b"x")
    snapshot = bf.bits.copy()
    bf.insert(b"x")
    assert np.array_equal(bf.bits, snapshot)


def test_empty_filter_contains_nothing():
    bf = BloomFilter.with_capacity(1000, 0.01)
    assert not any(bf.contains(f"k{i}".encode()) for i in range(1000))


def test_fresh_filter_false_positive_rate():
    bf = BloomFilter.with_capacity(10_000, 0.01, seed=7)
    bf.insert_many([f"in{i}".encode() for i in range(10_000)])
    hits = bf.contains_many([f"out{i}".encode() for i in range(10_000)])
    assert hits.mean() <= 0.02


def test_scalar_and_bulk_paths_agree():
    keys = [f"k{i}".encode() for i in range(2000)]
    a = BloomFilter.with_capacity(2000, 0.05, seed=3)
    b = BloomFilter.with_capacity(2000, 0.05, seed=3)
    a.insert_many(keys)
    for k in keys:
        b.insert(k)
    assert a.to_bytes() == b.to_bytes()
    probes = [f"p{i}".encode() for i in range(2000)]
    assert list(a.contains_many(probes)) == [a.contains(p) for p in probes]


def test_memory_accounting():
    assert BloomFilter(8 * 2**20, 1).memory_mb() == 1.0
    assert BloomFilter(489, 1).memory_mb() == pytest.approx(5.83e-5, rel=1e-2)
    assert BloomFilter(489, 1).size_bits() == 489


def test_serialization_round_trip():
    bf = BloomFilter.with_capacity(500, 0.01, seed=99, role="fixup")
    bf.insert_many([str(i).encode() for i in range(500)])
    blob = bf.to_bytes()
    assert blob[:4] == b"CLBF"
    back = BloomFilter.from_bytes(blob)
    assert back.to_bytes() == blob
    assert (back.m, back.h, back.seed, back.role, back.n_inserted) == (bf.m, bf.h, 99, "fixup", 500)
    assert all(back.contains(str(i).encode()) for i in range(500))


def test_deserialization_errors():
    blob = BloomFilter.with_capacity(10, 0.1).to_bytes()
    with pytest.raises(BloomError, match="magic"):
        BloomFilter.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(BloomError):
        BloomFilter.from_bytes(blob[:-1])


def test_seed_changes_bits():
    a = BloomFilter(1000, 3, seed=1)
    b = BloomFilter(1000, 3, seed=2)
    a.insert(b"x")
    b.insert(b"x")
    assert not np.array_equal(a.bits, b.bits)


# -- tuple subsets --------------------------------------------------------


def test_serialize_deterministic_and_positional():
    t = (W, "diesel", "true")
    assert serialize_tuple_subset(t) == serialize_tuple_subset(t)
    assert serialize_tuple_subset(("a", W)) != serialize_tuple_subset((W, "a"))
    assert serialize_tuple_subset(("ab", "c")) != serialize_tuple_subset(("a", "bc"))
    assert serialize_tuple_subset(("a",)) != serialize_tuple_subset(("a", W))


def test_serialize_no_collisions(rng):
    tuples = set()
    for _ in range(10_000):
        k = int(rng.integers(1, 5))
        tuples.add(tuple(W if rng.random() < 0.3 else f"v{rng.integers(0, 20)}" for _ in range(k)))
    encoded = {serialize_tuple_subset(t) for t in tuples}
    assert len(encoded) == len(tuples)


def test_index_three_columns():
    bf = BloomFilter.with_capacity(100, 0.001)
    n = index_tuple_subsets(bf, ("golf", "diesel", "true"))
    assert n == 7 == 2**3 - 1
    assert query_tuple(bf, (W, "diesel", "true"))
    assert query_tuple(bf, ("golf", W, W))
    assert query_tuple(bf, ("golf", "diesel", "true"))
    assert not query_tuple(bf, ("polo", "diesel", "true"))


def test_index_counts_twelve_columns():
    bf = BloomFilter.with_capacity(5000, 0.01)
    t = tuple(f"x{i}" for i in range(12))
    assert index_tuple_subsets(bf, t) == 2**12 - 1
    assert len(list(all_subsets(t))) == 4095


def test_index_rejects_wildcards():
    bf = BloomFilter(100, 2)
    with pytest.raises(BloomError, match="can only index concrete tuples"):
        index_tuple_subsets(bf, ("a", W))


def test_all_wildcard_query_illegal():
    bf = BloomFilter(100, 2)
    with pytest.raises(BloomError, match="illegal query"):
        query_tuple(bf, (W, W))


def test_subset_mask_sampling(rng):
    assert subset_masks(3) == list(range(1, 8))
    masks = subset_masks(19, budget=512, rng=rng)
    assert len(masks) == len(set(masks)) == 512
    assert all(1 <= m < 2**19 for m in masks)
    assert subset_masks(19, 2**20) == list(range(1, 2**19))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.binary(max_size=16), min_size=1, max_size=200), st.integers(0, 2**32 - 1))
def test_no_false_negatives(keys, seed):
    bf = BloomFilter.with_capacity(len(keys), 0.05, seed=seed)
    for k in keys:
        bf.insert(k)
    assert all(bf.contains(k) for k in keys)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "dd"]), min_size=1, max_size=6), st.data())
def test_every_pattern_of_indexed_tuple_found(t, data):
    bf = BloomFilter.with_capacity(2 ** len(t), 0.01)
    index_tuple_subsets(bf, t)
    mask = data.draw(st.integers(1, 2 ** len(t) - 1))
    pattern = tuple(tok if mask >> i & 1 else W for i, tok in enumerate(t))
    assert query_tuple(bf, pattern)
