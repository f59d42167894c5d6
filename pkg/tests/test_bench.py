import csv
import io
from collections import Counter

import pytest

from compactdb import table_scan
from compactdb.bench import (
    ConfigError,
    Workload,
    WorkloadConfig,
    build_engine,
    load_config,
    parse_config,
    report_compression,
    run_mixed,
    run_oltp,
)
from compactdb.bench.cli import main
from compactdb.bench.plots import figure_paths
from oracle import q1_naive

SMALL = dict(
    initial_orders=300,
    customers_per_district=20,
    name_pool_size=2000,
    items=1000,
    chunk_capacity=2048,
    tick_every_tx=50,
    bucket_tx=100,
    snapshot_every_tx=400,
    q1_date="2007-01-01 23:02:00",  # small loads only span minutes
)


def small_config(**kw):
    return WorkloadConfig(**{**SMALL, **kw})


def loaded(config):
    wl = Workload(config)
    eng = build_engine(config, wl.pool.values)
    wl.load(eng)
    return eng, wl


def contents(engine):
    with engine.create_snapshot() as snap:
        return {name: Counter(table_scan(snap, name)) for name in sorted(engine.relations)}


CONFIG_TEXT = """
# tiny run
seed = 7
partitions = 2
eager_compression = yes
zipf_s = 0.5   # flatter
q1_prefix = AB
"""


def test_parse_config():
    values = parse_config(CONFIG_TEXT)
    assert values == {"seed": 7, "partitions": 2, "eager_compression": True, "zipf_s": 0.5, "q1_prefix": "AB"}


@pytest.mark.parametrize(
    "text",
    ["seed 7", "colour = red", "seed = seven", "eager_compression = maybe", "partitions = 0", "zipf_s = -1"],
)
def test_bad_config_raises(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_overrides_win(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text(CONFIG_TEXT)
    cfg = load_config(path, seed=9, ordered_dict=None)
    assert cfg.seed == 9 and cfg.partitions == 2 and not cfg.ordered_dict


def test_zero_transactions_give_empty_metrics():
    eng, wl = loaded(small_config())
    m = run_oltp(eng, wl, 0)
    assert m.tx_count == 0 and m.buckets == []


def test_workload_is_deterministic():
    digests = []
    for _ in range(2):
        eng, wl = loaded(small_config(seed=3))
        run_oltp(eng, wl, 500)
        digests.append(contents(eng))
    assert digests[0] == digests[1]


def test_bucket_counts_conserve_transactions():
    eng, wl = loaded(small_config())
    m = run_oltp(eng, wl, 1050)
    assert sum(b.tx for b in m.buckets) == m.tx_count == 1050
    assert [b.tx for b in m.buckets] == [100] * 10 + [50]
    assert wl.new_orders + wl.payments == 1050


def test_hot_relation_ratio_is_one():
    cfg = small_config(freezing=False)
    eng, wl = loaded(cfg)
    for name in eng.relations:
        assert report_compression(eng, name).ratio == 1.0


def test_mixed_snapshot_cadence_and_q1_oracle():
    cfg = small_config()
    eng, wl = loaded(cfg)
    seen = []

    def verify(handle, result):
        rows = list(table_scan(handle, "orderline"))
        assert result.as_tuples() == q1_naive(rows, cfg.q1_prefix, cfg.q1_date)
        seen.append(len(result))

    m = run_mixed(eng, wl, 2000, verify=verify)
    assert len(m.snapshots) == len(m.q1) == 2000 // cfg.snapshot_every_tx
    assert len(seen) == 5 and any(seen)
    assert sum(b.tx for b in m.buckets) == 2000


def test_freezing_shrinks_snapshot_descriptors():
    per = {}
    for freezing in (True, False):
        cfg = small_config(freezing=freezing, page_size=256, huge_page_size=16384)
        eng, wl = loaded(cfg)
        m = run_mixed(eng, wl, 1600)
        per[freezing] = [s.descriptors_copied for s in m.snapshots]
        frozen = sum(c.frozen for r in eng.relations.values() for p in r.partitions for c in p.chunks)
        assert (frozen > 0) == freezing
    assert all(a < b for a, b in zip(per[True], per[False]))


def test_eager_and_lazy_agree_semantically():
    results = []
    for eager in (False, True):
        eng, wl = loaded(small_config(eager_compression=eager))
        run_mixed(eng, wl, 800)
        results.append(contents(eng))
    assert results[0] == results[1]


# -- CLI -------------------------------------------------------------------


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in SMALL.items()))
    return path


def run_cli(capsys, *argv):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


def _csv(text):
    return list(csv.reader(io.StringIO(text)))


def test_cli_usage_errors(capsys):
    assert run_cli(capsys, "frobnicate")[0] == 1
    assert run_cli(capsys, "stats", "--bogus")[0] == 1
    assert run_cli(capsys)[0] == 1
    assert run_cli(capsys, "oltp", "--tx", "many")[0] == 1


def test_cli_runtime_errors(capsys, tmp_path):
    assert run_cli(capsys, "stats", "--config", tmp_path / "missing.cfg")[0] == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("partitions = 0\n")
    assert run_cli(capsys, "stats", "--config", bad)[0] == 2


def test_cli_stats_on_fresh_engine(capsys, cfg_file):
    rc, out, _ = run_cli(capsys, "stats", "--config", cfg_file)
    assert rc == 0
    rows = {r[1]: r[3] for r in _csv(out)[1:] if r[0] == "counter"}
    assert rows and all(v == "0" for v in rows.values())


def test_cli_q1_is_byte_identical(capsys, cfg_file):
    a = run_cli(capsys, "q1", "--config", cfg_file, "--prefix", "B")
    b = run_cli(capsys, "q1", "--config", cfg_file, "--prefix", "B")
    assert a[0] == b[0] == 0
    assert a[1] == b[1]
    table = _csv(a[1])
    assert table[0][0] == "ol_number" and len(table) > 1


def test_cli_mixed_writes_csv_and_figures(capsys, cfg_file, tmp_path):
    out = tmp_path / "run.csv"
    rc, _, _ = run_cli(capsys, "mixed", "--config", cfg_file, "--tx", 800, "--csv", out)
    assert rc == 0
    first = out.read_bytes()
    assert first.startswith(b"kind,")
    for fig in figure_paths(out).values():
        assert fig.exists() and fig.stat().st_size > 0
    run_cli(capsys, "mixed", "--config", cfg_file, "--tx", 800, "--csv", out)
    assert out.read_bytes() == first


def test_cli_persist(capsys, cfg_file, tmp_path):
    out = tmp_path / "db.bin"
    rc, _, _ = run_cli(capsys, "persist", "--config", cfg_file, "--out", out)
    assert rc == 0 and out.stat().st_size > 0
