import math

import numpy as np
import pytest

from pdlab.metrics import (
    CSV_HEADER,
    MetricsWriter,
    StepRecord,
    by_step,
    format_record,
    parse_record,
    read_metrics,
    relative_delta,
    spread,
)
from pdlab.rng import Xoshiro256


def record(step=0, name="fc0/weight", rel_raw=0.5, acc=None):
    return StepRecord(
        step=step,
        tensor_name=name,
        l1_w=1.5,
        l1_delta_raw=0.75,
        l1_delta_applied=0.8,
        rel_delta_raw=rel_raw,
        rel_delta_applied=0.53,
        mean_rel_delta_raw=0.03,
        multiplier=2.0,
        gamma=1.0,
        loss=2.302585092994046,
        test_accuracy=acc,
    )


def test_relative_delta_basic():
    assert relative_delta(np.array([1.0, -1.0]), np.array([2.0, 2.0])) == 0.5


def test_relative_delta_zero_weight_sentinel():
    assert relative_delta(np.array([1.0]), np.array([0.0])) == -1.0


def test_format_parse_round_trip_simple():
    r = record(acc=0.875)
    assert parse_record(format_record(r)) == r


def test_format_parse_round_trip_none_accuracy():
    r = record(acc=None)
    line = format_record(r)
    assert line.endswith(",")
    assert parse_record(line) == r


def test_round_trip_is_bit_exact_for_awkward_floats():
    rng = Xoshiro256(19)
    for _ in range(200):
        # floats with full mantissas and wide exponents
        x = (rng.random() - 0.5) * 10.0 ** (rng.below(60) - 30.0)
        r = record(rel_raw=abs(x))
        r.loss = x
        r.multiplier = 1.0 / 3.0
        back = parse_record(format_record(r))
        assert back.loss == x
        assert back.rel_delta_raw == abs(x)
        assert back.multiplier == 1.0 / 3.0


def test_parse_rejects_wrong_field_count():
    with pytest.raises(ValueError):
        parse_record("1,2,3")


def test_writer_produces_header_and_rows(tmp_path):
    path = tmp_path / "m.csv"
    with MetricsWriter(path) as w:
        w.write_step([record(step=0), record(step=0, name="fc0/bias")])
        w.write_step([record(step=1, acc=0.5)])
    lines = path.read_text().split("\n")
    assert lines[0] == CSV_HEADER
    assert len([l for l in lines if l]) == 4
    back = read_metrics(path)
    assert len(back) == 3
    assert back[0] == record(step=0)
    assert back[2].test_accuracy == 0.5


def test_writer_rejects_unsafe_name(tmp_path):
    with MetricsWriter(tmp_path / "m.csv") as w:
        with pytest.raises(ValueError):
            w.write_step([record(name="a,b")])


def test_writer_rejects_step_regression(tmp_path):
    with MetricsWriter(tmp_path / "m.csv") as w:
        w.write_step([record(step=3)])
        with pytest.raises(ValueError):
            w.write_step([record(step=2)])
        # equal steps are fine: several tensors share one step
        w.write_step([record(step=3, name="fc0/bias")])


def test_writer_unwritable_path():
    with pytest.raises(OSError):
        MetricsWriter("/nonexistent-dir/m.csv")


def test_read_rejects_wrong_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("step,foo\n1,2\n")
    with pytest.raises(ValueError):
        read_metrics(path)


def test_file_level_round_trip_bit_exact(tmp_path):
    rng = Xoshiro256(23)
    path = tmp_path / "m.csv"
    originals = []
    with MetricsWriter(path) as w:
        for step in range(5):
            rows = []
            for name in ("fc0/weight", "fc0/bias"):
                r = record(step=step, name=name,
                           rel_raw=rng.random() * 10.0 ** (rng.below(20) - 10.0))
                r.loss = (rng.random() - 0.5) * 7.0
                rows.append(r)
            originals.extend(rows)
            w.write_step(rows)
    assert read_metrics(path) == originals


def test_spread_examples():
    rows = [record(rel_raw=v) for v in (0.1, 0.2, 0.4)]
    assert spread(rows) == 4.0


def test_spread_all_equal_is_one():
    rows = [record(rel_raw=0.3)] * 4
    assert spread(rows) == 1.0
    rows = [record(rel_raw=0.0)] * 2
    assert spread(rows) == 1.0


def test_spread_zero_min_nonzero_max_is_inf():
    rows = [record(rel_raw=0.0), record(rel_raw=0.5)]
    assert spread(rows) == math.inf


def test_spread_ignores_sentinel():
    rows = [record(rel_raw=-1.0), record(rel_raw=0.2), record(rel_raw=0.4)]
    assert spread(rows) == 2.0


def test_spread_needs_usable_values():
    with pytest.raises(ValueError):
        spread([record(rel_raw=-1.0)])


def test_by_step_groups_and_sorts():
    rows = [record(step=1, name="a"), record(step=0), record(step=1, name="b")]
    groups = by_step(rows)
    assert [len(g) for g in groups] == [1, 2]
    assert groups[1][0].tensor_name == "a"
    assert groups[1][1].tensor_name == "b"
