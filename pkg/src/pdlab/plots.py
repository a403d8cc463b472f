"""SVG figures over metrics CSVs: accuracy curves and per-layer delta bars.

Rendering is headless (Agg backend forced before pyplot import) and always
writes files; nothing here opens a window. Accuracy curves show the raw
eval points faintly under an exponentially smoothed line. The bar figure
groups one bar per tensor at snapshot steps on a log y-axis, where uniform
per-layer training shows as equal-height groups and disproportionate
training spans decades.
"""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import read_metrics


def ema(values, factor):
    """Exponential smoothing s_i = factor*s_{i-1} + (1-factor)*v_i, s_0 = v_0."""
    if not 0.0 <= factor < 1.0:
        raise ValueError(f"smoothing factor must be in [0,1), got {factor}")
    out = []
    s = None
    for v in values:
        s = v if s is None else factor * s + (1.0 - factor) * v
        out.append(s)
    return out


def accuracy_series(csv_path):
    """(steps, accuracies) at the eval points of one metrics CSV."""
    steps, accs = [], []
    seen = set()
    for r in read_metrics(csv_path):
        if r.test_accuracy is not None and r.step not in seen:
            seen.add(r.step)
            steps.append(r.step)
            accs.append(r.test_accuracy)
    return steps, accs


def plot_accuracy_curves(series, out_path, smoothing=0.9, y_min=None,
                         highlight=None, title="test accuracy"):
    """Raw + smoothed accuracy polylines, one pair per named series."""
    series = {name: (s, a) for name, (s, a) in series.items() if s}
    if not series:
        raise ValueError("no accuracy points to plot")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, (steps, accs) in sorted(series.items()):
        color = "red" if name == highlight else None
        label = f"{name} (best)" if name == highlight else name
        (line,) = ax.plot(steps, ema(accs, smoothing), color=color, label=label, linewidth=1.8)
        if smoothing > 0.0:
            ax.plot(steps, accs, color=line.get_color(), alpha=0.3, linewidth=0.8)
    ax.set_xlabel("training step")
    ax.set_ylabel("test accuracy")
    ax.set_title(title)
    if y_min is not None:
        ax.set_ylim(y_min, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_relative_delta_bars(csv_path, out_path, stride=15, raw=True):
    """Grouped per-tensor relative-delta bars at snapshot steps, log y-axis.

    Zero and sentinel values have no log-scale height and are skipped; the
    caption of an all-skipped group would be misleading, so at least one
    positive value is required overall.
    """
    records = read_metrics(csv_path)
    if not records:
        raise ValueError(f"no records in {csv_path}")
    snaps = {}
    names = []
    for r in records:
        if r.step % stride != 0:
            continue
        snaps.setdefault(r.step, {})[r.tensor_name] = (
            r.rel_delta_raw if raw else r.rel_delta_applied)
        if r.tensor_name not in names:
            names.append(r.tensor_name)
    steps = sorted(snaps)
    if not steps or not any(v > 0 for group in snaps.values() for v in group.values()):
        raise ValueError("no positive relative-delta values at snapshot steps")

    fig, ax = plt.subplots(figsize=(max(7, 1.2 * len(steps)), 4.5))
    width = 0.9 / len(names)
    cmap = plt.get_cmap("tab10")
    for j, name in enumerate(names):
        xs, hs = [], []
        for i, s in enumerate(steps):
            v = snaps[s].get(name, -1.0)
            if v > 0:
                xs.append(i + (j - len(names) / 2 + 0.5) * width)
                hs.append(v)
        ax.bar(xs, hs, width=width, label=name, color=cmap(j % 10))
    ax.set_yscale("log")
    ax.set_xticks(range(len(steps)))
    ax.set_xticklabels([f"step {s}" for s in steps])
    ax.set_xlabel("training step snapshot")
    ax.set_ylabel("relative delta  |dW|_1 / |W|_1")
    ax.set_title("per-tensor relative update size")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot(csv_paths, kind, out_path, smoothing=0.9, y_min=None, stride=15):
    """Dispatch on kind; accuracy curves accept many CSVs, bars exactly one."""
    if not csv_paths:
        raise ValueError("no input CSVs given")
    if kind == "accuracy_curve":
        series = {}
        for path in csv_paths:
            name = os.path.basename(os.path.dirname(path)) or os.path.basename(path)
            series[name] = accuracy_series(path)
        return plot_accuracy_curves(series, out_path, smoothing=smoothing, y_min=y_min)
    if kind == "relative_delta_bars":
        if len(csv_paths) != 1:
            raise ValueError("relative_delta_bars takes exactly one CSV")
        return plot_relative_delta_bars(csv_paths[0], out_path, stride=stride)
    raise ValueError(f"unknown plot kind {kind!r}")
