"""Single training runs and grid sweeps over the conv net.

A run is fully determined by its config: data (IDX files or the synthetic
fixture), net initialization, batch order, and updates all derive from the
one seed, so repeating a run reproduces the metrics CSV byte for byte.

Divergence (non-finite loss or loss above the threshold) aborts the run
with a typed status before the offending step writes any rows; a metrics
file never contains NaN or Inf.
"""

import itertools
import json
import os
import time
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import plots
from .config import build_rule, build_schedule, format_config, validate
from .data import batches, load_dataset, synthetic
from .metrics import MetricsWriter, read_metrics
from .net import InitPolicy, backward, build_mnist_net, forward, init, predict_logits
from .optim import OptimizerState, step
from .rng import derive_seed

DIVERGENCE_LOSS = 1e6

# Seed salts so the net init, train data, and test data draw from
# unrelated streams even though they share the config seed.
_SALT_NET = 0xF17
_SALT_TRAIN = 0xDA7A
_SALT_TEST = 0x7E57


@dataclass
class RunResult:
    status: str
    out_dir: str
    metrics_path: str
    summary: dict


def load_run_data(cfg):
    """The (train, test) datasets a config names."""
    if cfg.synthetic:
        train = synthetic(cfg.train_limit or 5000, derive_seed(cfg.seed, _SALT_TRAIN))
        test = synthetic(cfg.test_limit or 1000, derive_seed(cfg.seed, _SALT_TEST))
        return train, test
    train = load_dataset(cfg.data_dir, "train", cfg.train_limit)
    test = load_dataset(cfg.data_dir, "test", cfg.test_limit)
    return train, test


def evaluate(net, ds, chunk=250):
    """Fraction of ds classified correctly, streamed in forward-only chunks."""
    correct = 0
    labels = np.asarray(ds.labels)
    for i in range(0, len(ds), chunk):
        logits = predict_logits(net, ds.images[i:i + chunk])
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[i:i + chunk]))
    return correct / len(ds)


def run(cfg):
    """Train per config; returns the typed result and writes out_dir files."""
    validate(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))

    train_ds, test_ds = load_run_data(cfg)
    net = build_mnist_net()
    init(net, InitPolicy(seed=derive_seed(cfg.seed, _SALT_NET)))
    rule = build_rule(cfg)
    schedule = build_schedule(cfg)
    state = OptimizerState()

    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    summary_path = os.path.join(cfg.out_dir, "summary.json")
    t0 = time.perf_counter()
    best_acc = None
    final_acc = None
    last_loss = None
    epoch = 0
    queue = deque(batches(train_ds, cfg.batch_size, cfg.seed, epoch))

    with MetricsWriter(metrics_path) as writer:
        for step_idx in range(cfg.steps):
            if not queue:
                epoch += 1
                queue = deque(batches(train_ds, cfg.batch_size, cfg.seed, epoch))
            images, labels = queue.popleft()
            loss, cache = forward(net, images, labels)
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                summary = {
                    "status": "diverged",
                    "diverged_at_step": step_idx,
                    "loss": repr(float(loss)),
                    "steps_completed": step_idx,
                    "final_accuracy": final_acc,
                    "best_accuracy": best_acc,
                    "wall_time_s": round(time.perf_counter() - t0, 3),
                }
                _write_summary(summary_path, summary)
                return RunResult("diverged", cfg.out_dir, metrics_path, summary)
            backward(net, cache)
            records = step(rule, state, net, schedule, loss=loss)
            if (step_idx + 1) % cfg.eval_every == 0 or step_idx == cfg.steps - 1:
                acc = evaluate(net, test_ds)
                for r in records:
                    r.test_accuracy = acc
                final_acc = acc
                if best_acc is None or acc > best_acc:
                    best_acc = acc
            writer.write_step(records)
            last_loss = loss

    summary = {
        "status": "ok",
        "steps_completed": cfg.steps,
        "final_loss": last_loss,
        "final_accuracy": final_acc,
        "best_accuracy": best_acc,
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    _write_summary(summary_path, summary)
    return RunResult("ok", cfg.out_dir, metrics_path, summary)


def _write_summary(path, summary):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


@dataclass
class CellResult:
    name: str
    status: str
    out_dir: str
    final_accuracy: float = None
    best_accuracy: float = None
    final_smoothed: float = None
    error: str = None
    eta: float = 0.0


@dataclass
class SweepResult:
    cells: list
    best: str
    comparison_path: str
    svg_path: str


def _cell_name(cell):
    parts = []
    for key in sorted(cell):
        v = cell[key]
        parts.append(f"{key}={v:g}" if isinstance(v, float) else f"{key}={v}")
    return "-".join(parts)


def sweep(base, grid, explicit=()):
    """Run the Cartesian product of grid values over the base config.

    Each cell gets its own subdirectory under base.out_dir. A failing or
    diverging cell is recorded and the sweep continues. `explicit` lists
    config keys the caller set by hand, so the AdaGrad/Adam constant-gamma
    default is not applied over an explicit schedule choice.
    """
    if not grid or any(not vals for vals in grid.values()):
        raise ValueError("sweep grid must name at least one non-empty value list")
    keys = sorted(grid)
    cells = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]

    results = []
    for cell in cells:
        name = _cell_name(cell)
        cfg = replace(base, **cell, out_dir=os.path.join(base.out_dir, name))
        if ("schedule" not in explicit and "schedule" not in cell
                and cfg.optimizer in ("adagrad", "adam")):
            cfg = replace(cfg, schedule="constant")
        try:
            r = run(cfg)
            results.append(CellResult(
                name=name, status=r.status, out_dir=cfg.out_dir,
                final_accuracy=r.summary.get("final_accuracy"),
                best_accuracy=r.summary.get("best_accuracy"),
                eta=cfg.eta))
        except Exception as e:
            results.append(CellResult(name=name, status="error",
                                      out_dir=cfg.out_dir, error=str(e), eta=cfg.eta))

    comparison_path = os.path.join(base.out_dir, "comparison.csv")
    series = {}
    with open(comparison_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("cell,status,step,test_accuracy\n")
        for res in results:
            rows = []
            if res.status != "error":
                rows = [(r.step, r.test_accuracy)
                        for r in _first_per_step(read_metrics(os.path.join(res.out_dir, "metrics.csv")))
                        if r.test_accuracy is not None]
            for s, acc in rows:
                fh.write(f"{res.name},{res.status},{s},{acc:.17g}\n")
            if rows:
                series[res.name] = ([s for s, _ in rows], [a for _, a in rows])
                res.final_smoothed = plots.ema([a for _, a in rows], 0.9)[-1]
            else:
                fh.write(f"{res.name},{res.status},,\n")

    best = None
    scored = [r for r in results if r.status == "ok" and r.final_smoothed is not None]
    if scored:
        best = min(scored, key=lambda r: (-r.final_smoothed, r.eta, r.name)).name
        with open(os.path.join(base.out_dir, "best.txt"), "w", encoding="utf-8") as fh:
            chosen = next(r for r in scored if r.name == best)
            fh.write(f"{best}\nfinal_smoothed_accuracy = {chosen.final_smoothed:.17g}\n")

    svg_path = None
    if series:
        svg_path = os.path.join(base.out_dir, "sweep_accuracy.svg")
        plots.plot_accuracy_curves(series, svg_path, smoothing=0.9, highlight=best,
                                   title="test accuracy by sweep cell")
    return SweepResult(cells=results, best=best, comparison_path=comparison_path,
                       svg_path=svg_path)


def _first_per_step(records):
    """One record per step (the tensors repeat the accuracy and loss)."""
    seen = set()
    out = []
    for r in records:
        if r.step not in seen:
            seen.add(r.step)
            out.append(r)
    return out
