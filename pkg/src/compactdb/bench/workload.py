"""A reduced CH-benCHmark style workload.

Two transaction types run 50/50: a NewOrder-like one (one ORDER row, about
ten ORDERLINE rows and one HISTORY row) and a Payment-like one (customer
balance update plus a HISTORY row). String attributes draw from a Zipf
distributed name pool. Every value is a pure function of the config and seed.
"""

from __future__ import annotations

import datetime as dt
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..codecs import gen_zipf_pool
from ..engine import Engine
from ..schema import EPOCH, Schema
from .config import WorkloadConfig
from .metrics import Metrics

START = dt.datetime(2007, 1, 1, 23)  # an hour before the default Q1 date bound
SECOND = 1_000_000
START_US = (START - EPOCH) // dt.timedelta(microseconds=1)


def orderline_schema(string_length: int = 24) -> Schema:
    return Schema.of(
        [
            ("ol_o_id", "int32"),
            ("ol_d_id", "int32"),
            ("ol_w_id", "int32"),
            ("ol_number", "int32"),
            ("ol_i_id", "int32"),
            ("ol_supply_w_id", "int32"),
            ("ol_delivery_d", "timestamp"),
            ("ol_quantity", "int32"),
            ("ol_amount", "decimal(6,2)"),
            ("ol_dist_info", f"char({string_length})"),
        ],
        ["ol_w_id", "ol_d_id", "ol_o_id", "ol_number"],
    )


def order_schema() -> Schema:
    return Schema.of(
        [
            ("o_id", "int32"),
            ("o_d_id", "int32"),
            ("o_w_id", "int32"),
            ("o_c_id", "int32"),
            ("o_entry_d", "timestamp"),
            ("o_carrier_id", "int32"),
            ("o_ol_cnt", "int32"),
            ("o_all_local", "int32"),
        ],
        ["o_w_id", "o_d_id", "o_id"],
    )


def history_schema(string_length: int = 24) -> Schema:
    # TPC-C's HISTORY has no key; a surrogate h_id serves as one
    return Schema.of(
        [
            ("h_id", "int64"),
            ("h_c_id", "int32"),
            ("h_c_d_id", "int32"),
            ("h_c_w_id", "int32"),
            ("h_d_id", "int32"),
            ("h_w_id", "int32"),
            ("h_date", "timestamp"),
            ("h_amount", "decimal(6,2)"),
            ("h_data", f"varchar({string_length})"),
        ],
        ["h_id"],
    )


def customer_schema(string_length: int = 24) -> Schema:
    return Schema.of(
        [
            ("c_id", "int32"),
            ("c_d_id", "int32"),
            ("c_w_id", "int32"),
            ("c_last", f"varchar({string_length})"),
            ("c_balance", "decimal(12,2)"),
            ("c_ytd_payment", "decimal(12,2)"),
            ("c_payment_cnt", "int32"),
        ],
        ["c_w_id", "c_d_id", "c_id"],
    )


ROUTE = {"orderline": "ol_w_id", "order": "o_w_id", "history": "h_w_id", "customer": "c_w_id"}


def build_engine(config: WorkloadConfig, pool_values: Optional[list[str]] = None) -> Engine:
    """Engine with the four benchmark relations, partitioned by warehouse."""
    engine = Engine(config.engine_config())
    L = config.string_length
    schemas = {
        "orderline": orderline_schema(L),
        "order": order_schema(),
        "history": history_schema(L),
        "customer": customer_schema(L),
    }
    for name, schema in schemas.items():
        rel = engine.create_relation(name, schema, config.partitions, route_attr=ROUTE[name])
        if config.ordered_dict:
            if pool_values is None:
                pool_values = gen_zipf_pool(config.name_pool_size, config.zipf_s, L, config.seed).values
            for a in rel.string_attrs:
                rel.use_ordered_dictionary(a, pool_values)
    return engine


@dataclass
class OrderBatch:
    """Columns (internal values) for a batch of NewOrder-like transactions."""

    orders: list[np.ndarray]
    orderlines: list[np.ndarray]
    history: list[np.ndarray]
    line_counts: np.ndarray


class Workload:
    def __init__(self, config: WorkloadConfig):
        self.config = config
        seq = np.random.SeedSequence(config.seed)
        self.rng_mix, self.rng_orders, self.rng_pay, self.rng_load = (
            np.random.default_rng(s) for s in seq.spawn(4)
        )
        self.pool = gen_zipf_pool(config.name_pool_size, config.zipf_s, config.string_length, config.seed)
        self.pool_array = np.array([v.encode("ascii") for v in self.pool.values], dtype=f"S{config.string_length}")
        self.clock = START_US
        self.next_o_id = np.ones(config.warehouses * config.districts, dtype=np.int64)
        self.next_h_id = 1
        self._orders: deque = deque()
        self._payments: deque = deque()
        self.new_orders = 0
        self.payments = 0

    # -- generation -----------------------------------------------------

    def _names(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.pool_array[self.pool.sample_ranks(n, rng)]

    def gen_orders(self, k: int, times: Optional[np.ndarray] = None, rng=None) -> OrderBatch:
        """``k`` orders with their lines and history rows; advances id counters."""
        cfg = self.config
        rng = rng or self.rng_orders
        w = rng.integers(1, cfg.warehouses + 1, k)
        d = rng.integers(1, cfg.districts + 1, k)
        c = rng.integers(1, cfg.customers_per_district + 1, k)
        lo = cfg.orderlines_per_order - cfg.orderline_spread
        cnt = rng.integers(lo, cfg.orderlines_per_order + cfg.orderline_spread + 1, k)
        # per-district sequential order ids
        slot = (w - 1) * cfg.districts + (d - 1)
        order = np.argsort(slot, kind="stable")
        sorted_slot = slot[order]
        starts = np.flatnonzero(np.r_[True, sorted_slot[1:] != sorted_slot[:-1]])
        rank = np.arange(k) - np.repeat(starts, np.diff(np.r_[starts, k]))
        o_id = np.empty(k, dtype=np.int64)
        o_id[order] = self.next_o_id[sorted_slot] + rank
        np.add.at(self.next_o_id, slot, 1)
        if times is None:
            times = self.clock + np.arange(k, dtype=np.int64) * SECOND
            self.clock += k * SECOND
        orders = [o_id, d, w, c, times, np.zeros(k, np.int64), cnt, np.ones(k, np.int64)]

        n = int(cnt.sum())
        owner = np.repeat(np.arange(k), cnt)
        first = np.repeat(np.cumsum(cnt) - cnt, cnt)
        ol_number = np.arange(n) - first + 1
        orderlines = [
            o_id[owner],
            d[owner],
            w[owner],
            ol_number,
            rng.integers(1, cfg.items + 1, n),
            w[owner],
            times[owner],
            np.full(n, 5),
            rng.integers(1, 1_000_000, n),
            self._names(n, rng),
        ]
        h_id = self.next_h_id + np.arange(k, dtype=np.int64)
        self.next_h_id += k
        history = [h_id, c, d, w, d, w, times, rng.integers(100, 500_001, k), self._names(k, rng)]
        return OrderBatch(orders, orderlines, history, cnt)

    def orderline_columns(self, n: int) -> list[np.ndarray]:
        """Exactly ``n`` orderlines of freshly generated orders (load path)."""
        mean = self.config.orderlines_per_order
        cols: list[list[np.ndarray]] = []
        have = 0
        while have < n:
            batch = self.gen_orders(max(1, (n - have) // mean + 1), rng=self.rng_load)
            cols.append(batch.orderlines)
            have += len(batch.orderlines[0])
        merged = [np.concatenate(parts) for parts in zip(*cols)]
        return [c[:n] for c in merged]

    def customer_columns(self) -> list[np.ndarray]:
        cfg = self.config
        w, d, c = np.meshgrid(
            np.arange(1, cfg.warehouses + 1),
            np.arange(1, cfg.districts + 1),
            np.arange(1, cfg.customers_per_district + 1),
            indexing="ij",
        )
        n = w.size
        names = self._names(n, self.rng_load)
        return [
            c.ravel(), d.ravel(), w.ravel(), names,
            np.full(n, -1000), np.full(n, 1000), np.ones(n, np.int64),
        ]

    # -- load -----------------------------------------------------------

    def load(self, engine: Engine) -> None:
        """Customers plus ``initial_orders`` orders through the bulk path."""
        engine.relation("customer").insert_many(self.customer_columns())
        if self.config.initial_orders:
            batch = self.gen_orders(self.config.initial_orders, rng=self.rng_load)
            engine.relation("order").insert_many(batch.orders)
            engine.relation("orderline").insert_many(batch.orderlines)
            engine.relation("history").insert_many(batch.history)

    # -- transactions ---------------------------------------------------

    def _next_order(self):
        if not self._orders:
            b = self.gen_orders(256, times=np.zeros(256, dtype=np.int64))
            o_rows = list(zip(*(c.tolist() for c in b.orders)))
            ol_rows = list(zip(*(c.tolist() for c in b.orderlines)))
            h_rows = list(zip(*(c.tolist() for c in b.history)))
            pos = 0
            for o, h, n in zip(o_rows, h_rows, b.line_counts.tolist()):
                self._orders.append((o, ol_rows[pos:pos + n], h))
                pos += n
        return self._orders.popleft()

    def _next_payment(self):
        if not self._payments:
            cfg = self.config
            rng = self.rng_pay
            k = 256
            cols = (
                rng.integers(1, cfg.warehouses + 1, k).tolist(),
                rng.integers(1, cfg.districts + 1, k).tolist(),
                rng.integers(1, cfg.customers_per_district + 1, k).tolist(),
                rng.integers(100, 500_001, k).tolist(),
                self._names(k, rng).tolist(),
            )
            self._payments.extend(zip(*cols))
        return self._payments.popleft()

    def new_order(self, engine: Engine) -> None:
        o, lines, h = self._next_order()
        now = self.clock
        o = list(o)
        o[4] = now
        engine.relations["order"].insert_raw(o)
        ol_rel = engine.relations["orderline"]
        for line in lines:
            line = list(line)
            line[6] = now
            ol_rel.insert_raw(line)
        h = list(h)
        h[6] = now
        engine.relations["history"].insert_raw(h)
        self.new_orders += 1

    def payment(self, engine: Engine) -> None:
        w, d, c, amount, data = self._next_payment()
        cust = engine.relations["customer"]
        part = cust.partitions[cust.route([c, d, w])]
        tid = part.pk_index[(w, d, c)]
        bal = part.value_at(tid, 4)
        ytd = part.value_at(tid, 5)
        cnt = part.value_at(tid, 6)
        tid = part.update_raw(tid, 4, bal - amount)
        tid = part.update_raw(tid, 5, ytd + amount)
        part.update_raw(tid, 6, cnt + 1)
        hid = self.next_h_id
        self.next_h_id += 1
        engine.relations["history"].insert_raw([hid, c, d, w, d, w, self.clock, amount, data])
        self.payments += 1

    def transaction(self, engine: Engine, kind: int) -> None:
        if kind == 0:
            self.new_order(engine)
        else:
            self.payment(engine)
        self.clock += SECOND

    def mix(self, tx_count: int) -> np.ndarray:
        """0 = NewOrder-like, 1 = Payment-like, 50/50."""
        return (self.rng_mix.random(tx_count) >= 0.5).astype(np.int8)


def run_oltp(
    engine: Engine,
    workload: Workload,
    tx_count: int,
    metrics: Optional[Metrics] = None,
    between: Optional[Callable[[int], None]] = None,
) -> Metrics:
    """Execute ``tx_count`` transactions, bucketed every ``bucket_tx``.

    ``between(i)`` runs after transaction ``i`` (maintenance, snapshots).
    """
    metrics = metrics or Metrics()
    bucket_tx = workload.config.bucket_tx
    kinds = workload.mix(tx_count)
    first = metrics.tx_count
    t0 = time.perf_counter()
    no0, pay0 = workload.new_orders, workload.payments
    for i, kind in enumerate(kinds.tolist()):
        workload.transaction(engine, kind)
        if between is not None:
            between(first + i + 1)
        if (i + 1) % bucket_tx == 0 or i + 1 == tx_count:
            t1 = time.perf_counter()
            metrics.add_bucket(
                workload.new_orders - no0, workload.payments - pay0, t1 - t0
            )
            t0, no0, pay0 = t1, workload.new_orders, workload.payments
    return metrics


def run_mixed(engine: Engine, workload: Workload, tx_count: int, verify: Optional[Callable] = None) -> Metrics:
    """OLTP interleaved with maintenance ticks, snapshots and one Q1 per snapshot.

    The previous snapshot stays alive until the next one is taken, so its
    replication count covers a full interval. ``verify(handle, result)`` is
    called for every Q1 result.
    """
    from ..query import q1_aggregate

    cfg = workload.config
    metrics = Metrics()
    live = []

    def between(i: int) -> None:
        if i % cfg.tick_every_tx == 0:
            metrics.freezes.extend(engine.maintenance_tick())
        if i % cfg.snapshot_every_tx == 0:
            if live:
                old = live.pop()
                metrics.add_snapshot(old.stats)
                old.drop()
            t0 = time.perf_counter()
            handle = engine.create_snapshot()
            result = q1_aggregate(handle, cfg.q1_prefix, cfg.q1_date)
            metrics.add_q1(handle.epoch, result, time.perf_counter() - t0)
            if verify is not None:
                verify(handle, result)
            live.append(handle)

    run_oltp(engine, workload, tx_count, metrics, between)
    for handle in live:
        metrics.add_snapshot(handle.stats)
        handle.drop()
    return metrics
