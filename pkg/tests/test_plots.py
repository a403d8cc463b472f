import os

import pytest

from pdlab.metrics import MetricsWriter, StepRecord
from pdlab.plots import (
    accuracy_series,
    ema,
    plot,
    plot_accuracy_curves,
    plot_relative_delta_bars,
)


def rec(step, name, rel_raw, acc=None, rel_applied=None):
    return StepRecord(
        step=step, tensor_name=name, l1_w=1.0, l1_delta_raw=0.1,
        l1_delta_applied=0.1, rel_delta_raw=rel_raw,
        rel_delta_applied=rel_raw if rel_applied is None else rel_applied,
        mean_rel_delta_raw=0.03, multiplier=1.0, gamma=1.0, loss=1.0,
        test_accuracy=acc)


def write_csv(path, steps=31, tensors=("fc0/weight", "fc0/bias"), acc_every=2):
    with MetricsWriter(path) as w:
        for s in range(steps):
            acc = 0.5 + 0.4 * s / steps if s % acc_every == 0 else None
            w.write_step([rec(s, t, rel_raw=0.01 * (i + 1), acc=acc)
                          for i, t in enumerate(tensors)])
    return str(path)


def test_ema_factor_zero_is_identity():
    assert ema([1.0, 2.0, 3.0], 0.0) == [1.0, 2.0, 3.0]


def test_ema_recurrence_by_hand():
    got = ema([1.0, 2.0], 0.9)
    assert got[0] == 1.0
    assert abs(got[1] - (0.9 * 1.0 + 0.1 * 2.0)) < 1e-15


def test_ema_starts_at_first_value():
    assert ema([5.0, 5.0, 5.0], 0.99) == [5.0, 5.0, 5.0]


def test_ema_validation():
    with pytest.raises(ValueError):
        ema([1.0], 1.0)
    with pytest.raises(ValueError):
        ema([1.0], -0.1)
    assert ema([], 0.9) == []


def test_accuracy_series_dedups_per_step(tmp_path):
    path = write_csv(tmp_path / "m.csv", steps=6, acc_every=2)
    steps, accs = accuracy_series(path)
    assert steps == [0, 2, 4]
    assert len(accs) == 3
    assert all(0.0 <= a <= 1.0 for a in accs)


def test_plot_accuracy_curves_writes_svg(tmp_path):
    out = tmp_path / "acc.svg"
    series = {"a": ([0, 1, 2], [0.1, 0.5, 0.9]), "b": ([0, 1, 2], [0.2, 0.3, 0.4])}
    got = plot_accuracy_curves(series, str(out), smoothing=0.9, y_min=0.5,
                               highlight="a")
    assert got == str(out)
    text = out.read_text()
    assert "<svg" in text


def test_plot_accuracy_curves_skips_empty_series(tmp_path):
    out = tmp_path / "acc.svg"
    series = {"a": ([0, 1], [0.1, 0.2]), "empty": ([], [])}
    plot_accuracy_curves(series, str(out))
    assert out.is_file()


def test_plot_accuracy_curves_rejects_all_empty(tmp_path):
    with pytest.raises(ValueError):
        plot_accuracy_curves({"a": ([], [])}, str(tmp_path / "x.svg"))
    with pytest.raises(ValueError):
        plot_accuracy_curves({}, str(tmp_path / "x.svg"))


def test_plot_relative_delta_bars_writes_svg(tmp_path):
    csv = write_csv(tmp_path / "m.csv", steps=31)
    out = tmp_path / "bars.svg"
    got = plot_relative_delta_bars(csv, str(out), stride=15)
    assert got == str(out)
    assert "<svg" in out.read_text()


def test_plot_relative_delta_bars_needs_positive_values(tmp_path):
    path = tmp_path / "m.csv"
    with MetricsWriter(path) as w:
        w.write_step([rec(0, "fc0/weight", rel_raw=0.0)])
        w.write_step([rec(15, "fc0/weight", rel_raw=-1.0)])
    with pytest.raises(ValueError):
        plot_relative_delta_bars(str(path), str(tmp_path / "bars.svg"), stride=15)


def test_plot_relative_delta_bars_empty_file(tmp_path):
    path = tmp_path / "m.csv"
    with MetricsWriter(path):
        pass
    with pytest.raises(ValueError):
        plot_relative_delta_bars(str(path), str(tmp_path / "bars.svg"))


def test_plot_dispatcher_accuracy_multi_csv(tmp_path):
    run_a = tmp_path / "run_a"
    run_b = tmp_path / "run_b"
    run_a.mkdir()
    run_b.mkdir()
    a = write_csv(run_a / "metrics.csv", steps=8)
    b = write_csv(run_b / "metrics.csv", steps=8)
    out = tmp_path / "both.svg"
    plot([a, b], "accuracy_curve", str(out), smoothing=0.5)
    assert out.is_file()


def test_plot_dispatcher_bars_single_csv_only(tmp_path):
    a = write_csv(tmp_path / "a.csv", steps=2)
    b = write_csv(tmp_path / "b.csv", steps=2)
    with pytest.raises(ValueError):
        plot([a, b], "relative_delta_bars", str(tmp_path / "x.svg"))


def test_plot_dispatcher_validation(tmp_path):
    a = write_csv(tmp_path / "a.csv", steps=2)
    with pytest.raises(ValueError):
        plot([], "accuracy_curve", str(tmp_path / "x.svg"))
    with pytest.raises(ValueError):
        plot([a], "pie_chart", str(tmp_path / "x.svg"))
