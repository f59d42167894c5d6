"""Metrics collected by the drivers and their CSV form.

The CSV is long-format: ``kind,id,metric,value``. Wall-clock measurements are
only written when requested, which keeps default output byte-identical for a
given config and seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Optional

from ..freeze import FreezeReport, PersistReport
from ..snapshot import SnapshotStats


@dataclass
class Bucket:
    index: int
    first_tx: int
    new_orders: int
    payments: int
    seconds: float

    @property
    def tx(self) -> int:
        return self.new_orders + self.payments

    @property
    def tps(self) -> float:
        return self.tx / self.seconds if self.seconds > 0 else 0.0


@dataclass
class Q1Run:
    epoch: int
    rows: list
    seconds: float


@dataclass
class Metrics:
    buckets: list[Bucket] = field(default_factory=list)
    freezes: list[FreezeReport] = field(default_factory=list)
    snapshots: list[SnapshotStats] = field(default_factory=list)
    q1: list[Q1Run] = field(default_factory=list)
    compression: list = field(default_factory=list)
    persists: list[PersistReport] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)

    @property
    def tx_count(self) -> int:
        return sum(b.tx for b in self.buckets)

    def add_bucket(self, new_orders: int, payments: int, seconds: float) -> None:
        self.buckets.append(Bucket(len(self.buckets), self.tx_count, new_orders, payments, seconds))

    def add_snapshot(self, stats: SnapshotStats) -> None:
        self.snapshots.append(stats)

    def add_q1(self, epoch: int, result, seconds: float) -> None:
        self.q1.append(Q1Run(epoch, result.rows, seconds))

    # -- serialisation --------------------------------------------------

    def rows(self, timing: bool = False) -> list[tuple]:
        out: list[tuple] = []
        for name in sorted(self.counters):
            out.append(("counter", name, "value", self.counters[name]))
        for b in self.buckets:
            out.append(("bucket", b.index, "first_tx", b.first_tx))
            out.append(("bucket", b.index, "new_orders", b.new_orders))
            out.append(("bucket", b.index, "payments", b.payments))
            if timing:
                out.append(("bucket", b.index, "seconds", f"{b.seconds:.6f}"))
                out.append(("bucket", b.index, "tps", f"{b.tps:.1f}"))
        for s in self.snapshots:
            out.append(("snapshot", s.epoch, "descriptors_copied", s.descriptors_copied))
            out.append(("snapshot", s.epoch, "pages_replicated", s.pages_replicated))
            if timing:
                out.append(("snapshot", s.epoch, "creation_seconds", f"{s.creation_seconds:.6f}"))
        for i, f in enumerate(self.freezes):
            fid = f"{f.relation}/{f.partition}/{f.chunk_index}#{i}"
            out.append(("freeze", fid, "committed", int(f.committed)))
            out.append(("freeze", fid, "tuples_frozen", f.tuples_frozen))
            out.append(("freeze", fid, "bytes_before", f.bytes_before))
            out.append(("freeze", fid, "bytes_after", f.bytes_after))
            out.append(("freeze", fid, "reworked_pages", f.reworked_pages))
            if timing:
                out.append(("freeze", fid, "seconds", f"{f.duration_seconds:.6f}"))
        for run in self.q1:
            for row in run.rows:
                rid = f"{run.epoch}/{row.ol_number}"
                out.append(("q1", rid, "sum_qty", row.sum_qty))
                out.append(("q1", rid, "sum_amount", row.sum_amount))
                out.append(("q1", rid, "avg_qty", _fmt_fraction(row.avg_qty)))
                out.append(("q1", rid, "avg_amount", _fmt_fraction(row.avg_amount)))
                out.append(("q1", rid, "count_order", row.count_order))
            if timing:
                out.append(("q1", run.epoch, "seconds", f"{run.seconds:.6f}"))
        for c in self.compression:
            out.extend(c.csv_rows())
        for p in self.persists:
            pid = f"{p.relation}/{p.partition}"
            out.append(("persist", pid, "chunk_payloads", p.chunk_payloads))
            out.append(("persist", pid, "invalidation_records", p.invalidation_records))
            out.append(("persist", pid, "dictionary_records", p.dictionary_records))
            out.append(("persist", pid, "bytes_written", p.bytes_written))
        return out

    def to_csv(self, timing: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(("kind", "id", "metric", "value"))
        w.writerows(self.rows(timing))
        return buf.getvalue()

    def write_csv(self, path, timing: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv(timing))


def _fmt_fraction(x) -> str:
    """Exact fractions print as decimals rounded to 6 places."""
    q = Decimal(x.numerator) / Decimal(x.denominator)
    return str(q.quantize(Decimal("0.000001"), rounding=ROUND_HALF_EVEN))


def q1_csv(result, path: Optional[str] = None) -> str:
    """Q1 result as a plain CSV table."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(("ol_number", "sum_qty", "sum_amount", "avg_qty", "avg_amount", "count_order"))
    for r in result.rows:
        w.writerow((r.ol_number, r.sum_qty, r.sum_amount, _fmt_fraction(r.avg_qty), _fmt_fraction(r.avg_amount), r.count_order))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
