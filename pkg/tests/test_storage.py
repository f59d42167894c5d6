from collections import Counter
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from compactdb import DuplicateKeyError, InvalidRangeList, NotFoundError, Representation, Schema, SchemaError, Temperature, create_relation
from compactdb.bench.workload import orderline_schema
from helpers import fill, freeze_now, item_row, item_schema, small_engine
from oracle import RowStore


@pytest.fixture
def rel():
    return small_engine(capacity=8).create_relation("items", item_schema())


# -- construction ----------------------------------------------------------


def test_create_relation_partitions_and_dictionaries():
    r = create_relation(orderline_schema(), 5)
    assert len(r.partitions) == 5
    assert all(len(p) == 0 and not p.chunks for p in r.partitions)
    two = Schema.of([("a", "int32"), ("s", "varchar(4)"), ("t", "char(3)")], ["a"])
    assert sorted(create_relation(two, 1).dictionaries) == [1, 2]


def test_create_relation_errors():
    with pytest.raises(SchemaError):
        Schema.of([("a", "int32"), ("a", "int64")], ["a"])
    with pytest.raises(ValueError):
        create_relation(item_schema(), 0)
    with pytest.raises(SchemaError):
        Schema.of([("a", "char(0)")], ["a"])


# -- insert / TIDs ---------------------------------------------------------


def test_first_insert_is_tid_zero_and_capacity_arithmetic(rel):
    part = rel.partitions[0]
    rng = np.random.default_rng(0)
    tids = [part.insert(item_row(i, rng)) for i in range(9)]
    assert tids == list(range(9))
    assert len(part.chunks) == 2
    chunk, off = part.locate(8)
    assert chunk.index == 1 and off == 0


def test_insert_after_frozen_chunk_opens_new_chunk():
    eng = small_engine(capacity=8)
    rel = eng.create_relation("items", item_schema())
    part = rel.partitions[0]
    fill(rel, 8)
    freeze_now(part)
    tid = part.insert(item_row(100, np.random.default_rng(0)))
    assert tid == len(part.chunks[:1]) * 8 == 8
    assert not part.chunks[1].frozen


def test_insert_rejects_duplicate_and_bad_types(rel):
    fill(rel, 3)
    with pytest.raises(DuplicateKeyError):
        rel.insert((1, 0, "x", Decimal("1.00")))
    with pytest.raises(SchemaError):
        rel.insert(("one", 0, "x", Decimal("1.00")))
    with pytest.raises(SchemaError):
        rel.insert((99, 0, "much too long", Decimal("1.00")))


def test_insert_many_matches_single_inserts():
    rows = [item_row(i, np.random.default_rng(i)) for i in range(30)]
    a = small_engine(capacity=8).create_relation("items", item_schema())
    b = small_engine(capacity=8).create_relation("items", item_schema())
    for r in rows:
        a.insert(r)
    cols = [list(c) for c in zip(*(a.convert(r) for r in rows))]
    b.insert_many([np.array(c) for c in cols])
    assert list(a.scan()) == list(b.scan())
    with pytest.raises(DuplicateKeyError):
        b.insert_many([np.array(c[:1]) for c in cols])


# -- point reads -----------------------------------------------------------


def test_point_read_across_representations():
    eng = small_engine(capacity=8)
    rel = eng.create_relation("items", item_schema())
    part = rel.partitions[0]
    rows = [(i, 1, "CCC" if i % 2 else "BBB", Decimal("2.50")) for i in range(8)]
    for r in rows:
        rel.insert(r)
    assert part.point_read(3, "name") == "CCC"
    rep = freeze_now(part)
    assert rep.representations["name"] == Representation.DICT_KEYS.value
    assert rep.representations["grp"] == Representation.POSITIONAL_RLE.value
    for i, r in enumerate(rows):
        assert part.read_row(i) == r
    d = rel.dictionaries[2]
    key = d.key_of(b"CCC")
    assert d.value_of(key) == b"CCC" and part.point_read(1, 2) == "CCC"


def test_point_read_of_invalid_tid_fails(rel):
    part = rel.partitions[0]
    fill(rel, 4)
    part.invalidate_range(1, 2)
    with pytest.raises(NotFoundError):
        part.point_read(1, 0)
    with pytest.raises(NotFoundError):
        part.point_read(100, 0)


# -- update ----------------------------------------------------------------


def test_hot_update_in_place(rel):
    part = rel.partitions[0]
    fill(rel, 4)
    assert part.update(2, "grp", 77) == 2
    assert part.point_read(2, "grp") == 77
    assert len(part.invalid) == 0


def test_frozen_updates_invalidate_out_of_place():
    eng = small_engine(capacity=8)
    rel = eng.create_relation("items", item_schema())
    part = rel.partitions[0]
    fill(rel, 8)
    freeze_now(part)
    new = [part.update(t, "grp", 50 + t) for t in (1, 2, 3)]
    assert part.invalid.ranges() == [(1, 3)]
    assert new == [8, 9, 10]
    assert [part.point_read(t, "grp") for t in new] == [51, 52, 53]
    assert part.lookup(2) == 9
    with pytest.raises(NotFoundError):
        part.update(2, "grp", 0)


def test_cooling_update_relocates_and_clears_bitmap(rel):
    part = rel.partitions[0]
    fill(rel, 8)
    part.chunks[0].set_temperature(Temperature.COOLING)
    new = part.update(5, "grp", 9)
    assert new == 8
    assert not part.chunks[0].valid[5]
    assert len(part.invalid) == 0
    assert part.lookup(5) == 8


def test_cold_update_invalidates(rel):
    part = rel.partitions[0]
    fill(rel, 8)
    part.chunks[0].set_temperature(Temperature.COLD)
    part.update(4, "grp", 1)
    assert part.invalid.ranges() == [(4, 4)]


# -- delete ----------------------------------------------------------------


def test_delete_hot_uses_bitmap(rel):
    part = rel.partitions[0]
    fill(rel, 6)
    part.delete(4)
    assert not part.chunks[0].valid[4]
    assert len(part.invalid) == 0
    assert part.lookup(4) is None
    with pytest.raises(NotFoundError):
        part.delete(4)


def test_delete_frozen_records_range():
    eng = small_engine(capacity=8)
    rel = eng.create_relation("items", item_schema())
    part = rel.partitions[0]
    fill(rel, 8)
    freeze_now(part)
    part.delete(7)
    assert part.invalid.ranges() == [(7, 7)]


# -- invalid ranges and valid runs -----------------------------------------


def test_invalidate_range_merging():
    lst = InvalidRangeList()
    lst.add(1, 2)
    lst.add(3, 4)
    assert lst.ranges() == [(1, 4)]
    lst.add(2, 2)
    assert lst.ranges() == [(1, 4)]
    other = InvalidRangeList()
    other.add(1, 3)
    assert other.ranges() == [(1, 3)]


@given(st.lists(st.tuples(st.integers(0, 60), st.integers(0, 8)), max_size=40))
def test_invalid_range_list_matches_set_model(ops):
    lst = InvalidRangeList()
    model: set[int] = set()
    for b, length in ops:
        lst.add(b, b + length)
        model.update(range(b, b + length + 1))
    rs = lst.ranges()
    for (b1, e1), (b2, _) in zip(rs, rs[1:]):
        assert e1 + 1 < b2
    assert all(b <= e for b, e in rs)
    assert {t for b, e in rs for t in range(b, e + 1)} == model
    for t in range(0, 75):
        assert (t in lst) == (t in model)
    mask = np.ones(80, dtype=bool)
    lst.clear_mask(mask, 0)
    assert set(np.flatnonzero(~mask).tolist()) == model


def test_valid_runs_examples():
    eng = small_engine(capacity=6)
    rel = eng.create_relation("items", item_schema())
    part = rel.partitions[0]
    fill(rel, 6)
    assert list(part.valid_runs(0)) == [(0, 5)]
    part.invalidate_range(1, 3)
    assert list(part.valid_runs(0)) == [(0, 0), (4, 5)]
    part.invalidate_range(0, 5)
    assert list(part.valid_runs(0)) == []


def test_valid_runs_partition_the_chunk(rel):
    part = rel.partitions[0]
    fill(rel, 8)
    part.delete(2)
    part.invalidate_range(5, 6)
    runs = {t for b, e in part.valid_runs(0) for t in range(b, e + 1)}
    deleted = {i for i in range(8) if not part.chunks[0].valid[i]}
    invalid = {t for t in range(8) if t in part.invalid}
    assert runs | deleted | invalid == set(range(8))
    assert not (runs & deleted) and not (runs & invalid)


# -- multiset equivalence against the oracle -------------------------------


@given(
    st.lists(
        st.tuples(st.sampled_from("iiudfc"), st.integers(0, 10**6)),
        min_size=1,
        max_size=150,
    )
)
def test_random_operations_match_row_store(ops):
    eng = small_engine(capacity=8, page_size=16)
    rel = eng.create_relation("items", item_schema())
    part = rel.partitions[0]
    oracle = RowStore(rel.schema)
    next_id = 0
    names = ["alpha", "beta", "BBB", "CCC"]
    for op, x in ops:
        keys = sorted(oracle.rows)
        if op == "i" or not keys:
            row = (next_id, x % 7, names[x % 4], Decimal(x % 1000) / 10)
            rel.insert(row)
            oracle.insert(row)
            next_id += 1
        elif op == "u":
            key = keys[x % len(keys)]
            attr = 1 + x % 3
            value = [x % 11, names[(x >> 3) % 4], Decimal(x % 500) / 100][attr - 1]
            part.update(part.lookup(key[0]), attr, value)
            oracle.update(key, attr, value)
        elif op == "d":
            key = keys[x % len(keys)]
            part.delete(part.lookup(key[0]))
            oracle.delete(key)
        elif op == "f":
            for ci, chunk in enumerate(part.chunks):
                if chunk.full and not chunk.frozen and x % 2:
                    freeze_now(part, ci)
                    break
        else:
            eng.maintenance_tick()
        if op in "fc":
            # chunks frozen or cooled; pk index must still resolve every row
            for key in oracle.rows:
                assert part.read_row(part.lookup(key[0])) == oracle.rows[key]
    assert Counter(part.scan()) == oracle.multiset()
    assert len(part) == len(oracle.rows)
    assert len(part.pk_index) == len(oracle.rows)


def test_tids_never_reused(rel):
    part = rel.partitions[0]
    fill(rel, 8)
    seen = set(range(8))
    part.chunks[0].set_temperature(Temperature.COLD)
    for t in (0, 3):
        new = part.update(t, "grp", 1)
        assert new not in seen
        seen.add(new)
    part.delete(part.lookup(5))
    t = part.insert((999, 1, "z", Decimal(0)))
    assert t not in seen
