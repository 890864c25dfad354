import csv
import io
import math

import numpy as np
import pytest

from cellcache.config import build_config, load_config, parse_config_text
from cellcache.exceptions import InvalidConfig, MissingAxis, ParseError, UnknownKey
from cellcache.learning import LearningRateWarning
from cellcache.simulator import SCHEMES, SimConfig
from cellcache.sweep import (
    AGG_COLUMNS,
    RAW_COLUMNS,
    AggRow,
    SweepSpec,
    aggregate,
    csv_text,
    emit_figure_data,
    format_number,
    read_agg_csv,
    run_sweep,
    write_csv,
)

TINY = SimConfig(serving_instants=60, training_instants=100)


def _write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.mark.example
def test_empty_file_gives_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, ""), warn=False)
    assert cfg == SimConfig()
    # the simulation table values
    assert (cfg.num_scbs, cfg.num_sues, cfg.num_mues, cfg.num_contents) == (3, 15, 50, 30)
    assert (cfg.bandwidth_hz, cfg.small_cell_radius_m, cfg.mbs_tx_power_dbm, cfg.scbs_tx_power_dbm) == (5e6, 40.0, 46.0, 30.0)
    assert (cfg.noise_density_dbm_hz, cfg.mean_popularity, cfg.storage_capacity_files) == (-174.0, 10.0, 10)
    assert (cfg.utility_exponent, cfg.regret_exponent, cfg.strategy_exponent) == (0.5, 0.6, 0.7)
    assert cfg.training_instants == 500


@pytest.mark.example
def test_single_override(tmp_path):
    cfg = load_config(_write(tmp_path, "# comment\n\nzipf_exponent = 0.6  # trailing\n"), warn=False)
    assert cfg == SimConfig(zipf_exponent=0.6)


@pytest.mark.example
def test_unknown_key_named(tmp_path):
    with pytest.raises(UnknownKey) as e:
        load_config(_write(tmp_path, "zipf_exponentt = 0.6\n"))
    assert e.value.key == "zipf_exponentt" and e.value.line == 1
    assert "zipf_exponentt" in str(e.value)


@pytest.mark.parametrize("text,line,key", [
    ("num_sues = 15\nnum_sues 3\n", 2, None),
    ("num_sues = 1.5\n", 1, "num_sues"),
    ("num_sues = 4\nnum_sues = 5\n", 2, "num_sues"),
    ("\n\nzipf_exponent =\n", 3, "zipf_exponent"),
    ("seeds = 3:1\n", 1, "seeds"),
    ("zipf_values = 0.4,,1.2\n", 1, "zipf_values"),
])
def test_parse_errors_carry_location(text, line, key):
    with pytest.raises(ParseError) as e:
        parse_config_text(text)
    assert e.value.line == line and e.value.key == key
    assert str(e.value).startswith(f"line {line}:")


def test_sweep_keys_build_spec():
    spec = build_config(parse_config_text("zipf_values = 0.4, 0.8\nseeds = 0:3\nschemes = proposed\nnum_mues = 10"))
    assert isinstance(spec, SweepSpec)
    assert spec.zipf_values == (0.4, 0.8) and spec.seeds == (0, 1, 2) and spec.schemes == ("proposed",)
    assert spec.capacity_values == (10,) and spec.base.num_mues == 10


def test_invalid_values_rejected(tmp_path):
    with pytest.raises(InvalidConfig):
        load_config(_write(tmp_path, "scheme = lru\n"))
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "missing.cfg")


def test_fallback_seed(tmp_path):
    assert load_config(None, fallback_seed=7, warn=False).master_seed == 7
    assert load_config(_write(tmp_path, "master_seed = 3"), fallback_seed=7, warn=False).master_seed == 3


def test_learning_rate_warning(tmp_path):
    with pytest.warns(LearningRateWarning):
        load_config(_write(tmp_path, "utility_exponent = 0.5"))


@pytest.mark.parametrize("kw", [
    dict(zipf_values=()), dict(seeds=(1, 1)), dict(schemes=("lru",)), dict(capacity_values=(2.5,)),
    dict(capacity_values=(0,)), dict(zipf_values=(-1.0,)),
])
def test_sweep_spec_validation(kw):
    base = dict(base=TINY, zipf_values=(0.8,), capacity_values=(10,), schemes=SCHEMES, seeds=(0,))
    base.update(kw)
    with pytest.raises(InvalidConfig):
        SweepSpec(**base)


@pytest.fixture(scope="module")
def grid_rows():
    spec = SweepSpec(TINY, (0.4, 0.8, 1.2), (10,), SCHEMES, tuple(range(5)))
    return spec, run_sweep(spec)


@pytest.mark.example
def test_product_count_and_order(grid_rows):
    spec, rows = grid_rows
    assert len(rows) == 45 == len(spec)
    assert [(r.zipf_exponent, r.capacity, r.scheme, r.seed) for r in rows] == list(spec.cells())


@pytest.mark.example
def test_same_spec_same_bytes(grid_rows):
    spec, rows = grid_rows
    assert csv_text(RAW_COLUMNS, run_sweep(spec)) == csv_text(RAW_COLUMNS, rows)


def test_parallel_matches_serial(grid_rows):
    spec, rows = grid_rows
    assert csv_text(RAW_COLUMNS, run_sweep(spec, jobs=2)) == csv_text(RAW_COLUMNS, rows)


@pytest.mark.example
def test_aggregate_is_recomputable(grid_rows, tmp_path):
    _, rows = grid_rows
    write_csv(tmp_path / "raw.csv", RAW_COLUMNS, rows)
    agg = aggregate(rows)
    assert len(agg) == 9
    with open(tmp_path / "raw.csv", newline="") as fh:
        raw = list(csv.DictReader(fh))
    for a in agg:
        vals = [float(r["avg_delay_s"]) for r in raw
                if r["scheme"] == a.scheme and float(r["zipf_exponent"]) == a.zipf_exponent]
        assert len(vals) == a.n_seeds == 5
        assert a.avg_delay_s_mean == pytest.approx(sum(vals) / len(vals), rel=1e-8)
        sd = math.sqrt(sum((v - sum(vals) / 5) ** 2 for v in vals) / 4)
        assert a.avg_delay_s_stderr == pytest.approx(sd / math.sqrt(5), rel=1e-6)


@pytest.mark.example
def test_figure_needs_its_axis(grid_rows):
    _, rows = grid_rows
    with pytest.raises(MissingAxis):
        emit_figure_data(aggregate(rows), 4)
    cap_only = [a._replace(zipf_exponent=0.6, capacity=c) for a, c in zip(aggregate(rows)[:6], (5, 5, 5, 10, 10, 10))]
    with pytest.raises(MissingAxis):
        emit_figure_data(cap_only, 2)
    assert len(emit_figure_data(cap_only, 4)) == 6


@pytest.mark.example
def test_single_cell_table_single_row():
    row = AggRow("proposed", 0.8, 10, 3, 0.1, 0.01, 1.0, 0.1, 0.4, 0.02)
    assert emit_figure_data([row], 2) == [(0.8, "proposed", 0.1, 0.01)]
    assert emit_figure_data([row], 5) == [(10, "proposed", 1.0, 0.1)]


@pytest.mark.example
def test_figure_matches_aggregate_csv(grid_rows, tmp_path):
    _, rows = grid_rows
    write_csv(tmp_path / "agg.csv", AGG_COLUMNS, aggregate(rows))
    agg_back = read_agg_csv(tmp_path / "agg.csv")
    fig = emit_figure_data(agg_back, 3)
    with open(tmp_path / "agg.csv", newline="") as fh:
        cells = {(d["scheme"], d["zipf_exponent"]): d for d in csv.DictReader(fh)}
    for f in fig:
        d = cells[(f.scheme, format_number(f.x_value))]
        assert format_number(f.mean) == d["offloading_gain_mean"]
        assert format_number(f.stderr) == d["offloading_gain_stderr"]


def test_figure_slices_two_axis_tables():
    rows = [AggRow("proposed", z, c, 2, z + c, 0.0, 1.0, 0.0, 0.5, 0.0) for z in (0.4, 0.8) for c in (5, 10)]
    with pytest.raises(InvalidConfig):
        emit_figure_data(rows, 2)
    assert [r.mean for r in emit_figure_data(rows, 2, at=10)] == [10.4, 10.8]
    with pytest.raises(MissingAxis):
        emit_figure_data(rows, 4, at=0.6)


def test_number_format():
    assert format_number(0.1 + 0.2) == "0.3"
    assert format_number(1 / 3) == "0.333333333"
    assert format_number(7) == "7" and format_number(np.int64(7)) == "7"
    assert format_number(math.inf) == "inf" and format_number(1e-12) == "1e-12"
    buf = io.StringIO()
    write_csv(buf, ("a", "b"), [(1, 2.5)])
    assert buf.getvalue() == "a,b\n1,2.5\n"
