"""Per-step, per-tensor training instrumentation and its CSV form.

Each training step emits one row per registered tensor. Two relative-change
columns coexist on purpose: the rel_delta_* pair is the L1-norm ratio
|delta|_1 / |w|_1 shown in the bar plots, while mean_rel_delta_raw is the
per-entry mean |delta_i / w_i| (guarded division) that the percent-delta
rule pins at eta*gamma(t) exactly. Both are recorded because the two
quantities agree only when |w| has no within-tensor dispersion.

Floats serialize with 17 significant digits so a written file parses back
bit for bit. Degenerate ratios use the sentinel -1 and absent accuracies an
empty field; no NaN or Inf ever reaches a row.
"""

from dataclasses import dataclass

from .tensor import l1_norm

CSV_HEADER = ("step,tensor_name,l1_w,l1_delta_raw,l1_delta_applied,"
              "rel_delta_raw,rel_delta_applied,mean_rel_delta_raw,"
              "multiplier,gamma,loss,test_accuracy")


@dataclass
class StepRecord:
    step: int
    tensor_name: str
    l1_w: float
    l1_delta_raw: float
    l1_delta_applied: float
    rel_delta_raw: float
    rel_delta_applied: float
    mean_rel_delta_raw: float
    multiplier: float
    gamma: float
    loss: float
    test_accuracy: float = None


def relative_delta(delta, w):
    """L1-norm ratio |delta|_1 / |w|_1, or the sentinel -1 when |w|_1 = 0."""
    denom = l1_norm(w)
    if denom == 0.0:
        return -1.0
    return l1_norm(delta) / denom


def _fmt(x):
    return f"{x:.17g}"


def format_record(r):
    acc = "" if r.test_accuracy is None else _fmt(r.test_accuracy)
    return (f"{r.step},{r.tensor_name},{_fmt(r.l1_w)},{_fmt(r.l1_delta_raw)},"
            f"{_fmt(r.l1_delta_applied)},{_fmt(r.rel_delta_raw)},"
            f"{_fmt(r.rel_delta_applied)},{_fmt(r.mean_rel_delta_raw)},"
            f"{_fmt(r.multiplier)},{_fmt(r.gamma)},{_fmt(r.loss)},{acc}")


def parse_record(line):
    parts = line.rstrip("\n").split(",")
    if len(parts) != 12:
        raise ValueError(f"expected 12 fields, got {len(parts)}: {line!r}")
    return StepRecord(
        step=int(parts[0]),
        tensor_name=parts[1],
        l1_w=float(parts[2]),
        l1_delta_raw=float(parts[3]),
        l1_delta_applied=float(parts[4]),
        rel_delta_raw=float(parts[5]),
        rel_delta_applied=float(parts[6]),
        mean_rel_delta_raw=float(parts[7]),
        multiplier=float(parts[8]),
        gamma=float(parts[9]),
        loss=float(parts[10]),
        test_accuracy=None if parts[11] == "" else float(parts[11]),
    )


class MetricsWriter:
    """Appends rows in the order given and flushes after every step.

    Tensor names must not contain commas or newlines; rows would stop being
    single CSV records. Steps must be non-decreasing across calls.
    """

    def __init__(self, path):
        self.path = str(path)
        self._last_step = -1
        try:
            self._fh = open(self.path, "w", encoding="utf-8", newline="")
            self._fh.write(CSV_HEADER + "\n")
            self._fh.flush()
        except OSError as e:
            raise OSError(f"cannot open metrics sink {self.path}: {e}") from e

    def write_step(self, records):
        lines = []
        for r in records:
            if "," in r.tensor_name or "\n" in r.tensor_name:
                raise ValueError(f"tensor name not CSV-safe: {r.tensor_name!r}")
            if r.step < self._last_step:
                raise ValueError(
                    f"step {r.step} after step {self._last_step}; stream must be ordered")
            lines.append(format_record(r))
        try:
            for line in lines:
                self._fh.write(line + "\n")
            self._fh.flush()
        except OSError as e:
            raise OSError(f"writing metrics to {self.path}: {e}") from e
        if records:
            self._last_step = records[-1].step

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_metrics(path):
    """Parse a metrics CSV back into StepRecords, bit-exactly."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ValueError(f"unrecognized metrics header in {path}: {header!r}")
        return [parse_record(line) for line in fh if line.strip()]


def spread(records):
    """max/min of rel_delta_raw across one step's records, sentinels excluded.

    All values equal (including all zero) gives 1.0; a zero minimum under a
    nonzero maximum is an infinite spread.
    """
    vals = [r.rel_delta_raw for r in records if r.rel_delta_raw >= 0.0]
    if not vals:
        raise ValueError("no usable rel_delta_raw values in this step's records")
    mx, mn = max(vals), min(vals)
    if mn == 0.0:
        return 1.0 if mx == 0.0 else float("inf")
    return mx / mn


def by_step(records):
    """Group a flat record list into per-step lists, preserving order."""
    groups = {}
    for r in records:
        groups.setdefault(r.step, []).append(r)
    return [groups[k] for k in sorted(groups)]
