"""Shared builders for the test suite."""

import datetime as dt
from decimal import Decimal

import numpy as np

from compactdb import Engine, EngineConfig, ObserverConfig, Schema


def small_engine(capacity=64, page_size=64, huge=1024, **kw) -> Engine:
    """Tiny chunks and pages so temperature machinery kicks in quickly."""
    obs = ObserverConfig(page_size=page_size, huge_page_size=huge)
    return Engine(EngineConfig(chunk_capacity=capacity, observer=obs, **kw))


def item_schema() -> Schema:
    return Schema.of(
        [("id", "int64"), ("grp", "int32"), ("name", "char(8)"), ("price", "decimal(8,2)")],
        ["id"],
    )


def item_row(i: int, rng: np.random.Generator, names=("alpha", "beta", "BBB", "CCC", "delta")):
    return (i, int(rng.integers(0, 10)), str(rng.choice(names)), Decimal(int(rng.integers(0, 10000))) / 100)


def freeze_all(engine, ticks=8):
    for _ in range(ticks):
        engine.maintenance_tick()


T0 = dt.datetime(2007, 1, 1, 23)


def freeze_now(part, ci: int = 0, **kw):
    """Force chunk ``ci`` cold and freeze it immediately."""
    from compactdb import Temperature, freeze_chunk

    part.chunks[ci].set_temperature(Temperature.COLD)
    report = freeze_chunk(part, ci, **kw)
    assert report.committed
    return report


def fill(rel, n: int, start: int = 0, seed: int = 0):
    """Insert ``n`` item rows with ids ``start..start+n-1``; returns the rows."""
    rng = np.random.default_rng(seed)
    rows = [item_row(i, rng) for i in range(start, start + n)]
    for r in rows:
        rel.insert(r)
    return rows


# Acceptance verdict lines, echoed in the terminal summary.
VERDICTS: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line
