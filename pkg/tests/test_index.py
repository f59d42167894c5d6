import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from compactdb import TidIndex, gen_zipf_pool
from compactdb.index import IndexEntryError, prefix_successor
from helpers import fill, freeze_now, item_schema, small_engine


def make(values: dict):
    return TidIndex(values.__getitem__)


def test_figure_example():
    vals = {0: b"CCC", 1: b"BBB"}
    idx = make(vals)
    idx.insert(0)
    idx.insert(1)
    assert list(idx) == [1, 0]
    assert idx.range_lookup(b"BBB", b"BBB") == [1]
    assert idx.range_lookup(b"ZZZ", b"ZZZZ") == []
    assert idx.prefix_lookup(b"B") == [1]
    assert idx.prefix_lookup(b"Q") == []


def test_ties_broken_by_tid():
    vals = {t: b"same" for t in (5, 2, 9, 1)}
    idx = make(vals)
    for t in vals:
        idx.insert(t)
    assert list(idx) == [1, 2, 5, 9]
    idx.delete(5)
    assert 5 not in idx and list(idx) == [1, 2, 9]


def test_duplicate_and_absent_errors():
    vals = {1: b"a"}
    idx = make(vals)
    idx.insert(1)
    with pytest.raises(IndexEntryError):
        idx.insert(1)
    idx.delete(1)
    with pytest.raises(IndexEntryError):
        idx.delete(1)


def test_prefix_successor():
    assert prefix_successor(b"B") == b"C"
    assert prefix_successor(b"a\xff") == b"b"
    assert prefix_successor(b"\xff\xff") is None


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 3000), st.integers(0, 40)), max_size=400), st.integers(0, 40), st.integers(0, 40))
def test_matches_brute_force(ops, lo, hi):
    vals: dict[int, int] = {}
    idx = TidIndex(lambda t: vals[t])
    present: set[int] = set()
    for ins, tid, v in ops:
        if ins and tid not in present:
            vals[tid] = v
            idx.insert(tid)
            present.add(tid)
        elif not ins and present:
            victim = sorted(present)[tid % len(present)]
            idx.delete(victim)
            present.remove(victim)
    idx.check()
    assert len(idx) == len(present)
    expect = sorted((vals[t], t) for t in present if lo <= vals[t] <= hi)
    assert idx.range_lookup(lo, hi) == [t for _, t in expect]
    assert idx.eq_lookup(lo) == sorted(t for t in present if vals[t] == lo)


def test_range_and_prefix_on_zipf_names():
    rng = np.random.default_rng(7)
    pool = gen_zipf_pool(2000, 1.2, 8, seed=1)
    names = [v.encode() for v in pool.sample(10_000, rng)]
    vals = dict(enumerate(names))
    idx = TidIndex.bulk(vals.__getitem__, np.arange(len(names)), np.array(names))
    idx.check()
    incremental = TidIndex(vals.__getitem__)
    for t in rng.permutation(len(names))[:3000].tolist():
        incremental.insert(t)
    incremental.check()
    for prefix in (b"A", b"KQ", b"Z", pool.values[0][:3].encode()):
        expect = sorted((v, t) for t, v in vals.items() if v.startswith(prefix))
        assert idx.prefix_lookup(prefix) == [t for _, t in expect]
    for _ in range(20):
        a, b = sorted(rng.choice(names, 2).tolist())
        expect = sorted((v, t) for t, v in vals.items() if a <= v <= b)
        assert idx.range_lookup(a, b) == [t for _, t in expect]


def test_memory_is_tid_only():
    n = 1_000_000
    tids = np.arange(n)
    short = np.repeat(np.arange(n // 10), 10)
    a = TidIndex.bulk(lambda t: short[t], tids, short)
    long_vals = np.array([b"x" * 200], dtype="S200")
    b = TidIndex.bulk(lambda t: long_vals[0], tids, np.zeros(n, dtype=np.int64))
    assert 8 <= a.memory_report() <= 48
    assert a.nbytes() == b.nbytes()


def test_engine_index_tracks_updates_and_relocations():
    eng = small_engine(capacity=8)
    rel = eng.create_relation("items", item_schema())
    fill(rel, 16)
    part = rel.partitions[0]
    (idx,) = eng.create_index("items", "name")
    freeze_now(part, 0)
    names = {t: part.point_read(t, "name") for t in part.tids()}
    moved = part.update(3, "name", "CCC")
    assert 3 not in idx and moved in idx
    part.update(12, "name", "BBB")  # hot: in place
    part.delete(5)
    idx.check()
    live = {t: part.point_read(t, "name") for t in part.tids()}
    assert sorted(idx) == sorted(live)
    for prefix in ("B", "C", "al"):
        expect = sorted((v, t) for t, v in live.items() if v.startswith(prefix))
        assert idx.prefix_lookup(prefix) == [t for _, t in expect]
    assert names  # frozen tuples resolved through the dictionary
    with pytest.raises(ValueError):
        eng.create_index("items", "name")
