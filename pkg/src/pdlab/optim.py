"""Gradient update rules, decay schedules, and the momentum accumulator.

The centerpiece is the percent-delta rule: rescale each tensor's gradient by
the scalar size(w) / |g/w|_1 so that the mean element-wise relative change
|delta_i / w_i| lands exactly at eta*gamma(t), the same for every tensor
regardless of depth or fan-in. Division by parameters is epsilon-guarded,
with sgn(0) taken as +1 so the guard always displaces the denominator.

Baselines: plain SGD, SGD+momentum, AdaGrad, Adam, and LARS (layer-wise
L2-norm ratio). Percent-delta and LARS produce already-scaled deltas, so
their momentum pass happens after scaling; the recorded "raw" delta is
always the pre-momentum one.

All delta_* functions are pure given (grad, w, state, t); state mutation
(AdaGrad sums, Adam moments, velocities) is confined to the passed slot.
"""

from dataclasses import dataclass

import numpy as np

from .metrics import StepRecord, relative_delta
from .tensor import ShapeError, l1_norm, l2_norm

EPS_DEFAULT = 1e-8

# Treat clamped-linear values this close to the floor as the floor itself;
# absorbs the accumulated rounding of t*m at the crossover step.
_CLAMP_SNAP = 1e-12


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule: base rate eta times decay gamma(t)."""

    eta: float
    kind: str = "constant"
    m: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta < 0:
            raise ValueError(f"eta must be finite and >= 0, got {self.eta}")
        if self.kind not in ("constant", "linear", "clamped_linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "linear" and self.m < 0:
            raise ValueError(f"linear slope m must be >= 0, got {self.m}")
        if self.kind == "clamped_linear":
            if self.m <= 0:
                raise ValueError(f"clamped_linear slope m must be > 0, got {self.m}")
            if not 0.0 < self.beta <= 1.0:
                raise ValueError(f"clamped_linear floor beta must be in (0,1], got {self.beta}")

    @staticmethod
    def constant(eta):
        return Schedule(eta, "constant")

    @staticmethod
    def linear(eta, m):
        return Schedule(eta, "linear", m=m)

    @staticmethod
    def clamped_linear(eta, m, beta):
        return Schedule(eta, "clamped_linear", m=m, beta=beta)


def gamma(schedule, t):
    """Decay value at step t: 1, 1 - t*m, or max(beta, 1 - t*m)."""
    if t < 0:
        raise ValueError(f"step t must be >= 0, got {t}")
    if schedule.kind == "constant":
        return 1.0
    linear = 1.0 - t * schedule.m
    if schedule.kind == "linear":
        return linear
    if linear - schedule.beta <= _CLAMP_SNAP:
        return schedule.beta
    return linear


RULE_NAMES = ("sgd", "momentum", "adagrad", "adam", "lars", "percent_delta")
_VARIANTS = RULE_NAMES

# Variants whose delta passes through the momentum accumulator before being
# applied. For lars/percent_delta the delta is already scaled at that point.
_WITH_MOMENTUM = ("momentum", "lars", "percent_delta")


@dataclass(frozen=True)
class UpdateRule:
    variant: str
    mu: float = 0.0
    eps: float = EPS_DEFAULT
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown update rule {self.variant!r}")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError(f"mu must be in [0,1), got {self.mu}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if not 0.0 < self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in (0,1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in (0,1), got {self.beta2}")

    @staticmethod
    def sgd():
        return UpdateRule("sgd")

    @staticmethod
    def momentum(mu=0.9):
        return UpdateRule("momentum", mu=mu)

    @staticmethod
    def adagrad(eps=EPS_DEFAULT):
        return UpdateRule("adagrad", eps=eps)

    @staticmethod
    def adam(beta1=0.9, beta2=0.999, eps=EPS_DEFAULT):
        return UpdateRule("adam", beta1=beta1, beta2=beta2, eps=eps)

    @staticmethod
    def lars(eps=EPS_DEFAULT, mu=0.9):
        return UpdateRule("lars", eps=eps, mu=mu)

    @staticmethod
    def percent_delta(eps=EPS_DEFAULT, mu=0.9):
        return UpdateRule("percent_delta", eps=eps, mu=mu)

    @staticmethod
    def from_name(name, mu=0.9, eps=EPS_DEFAULT, beta1=0.9, beta2=0.999):
        if name not in _VARIANTS:
            raise ValueError(f"unknown update rule {name!r}; choose from {_VARIANTS}")
        carries_mu = name in _WITH_MOMENTUM
        return UpdateRule(name, mu=mu if carries_mu else 0.0,
                          eps=eps, beta1=beta1, beta2=beta2)


class TensorState:
    """Per-tensor optimizer memory, allocated lazily at first touch."""

    __slots__ = ("adagrad_sum", "adam_m", "adam_v", "velocity")

    def __init__(self):
        self.adagrad_sum = None
        self.adam_m = None
        self.adam_v = None
        self.velocity = None


class OptimizerState:
    """Keyed per-tensor slots plus the shared step counter t."""

    def __init__(self):
        self.t = 0
        self.slots = {}

    def slot(self, name):
        s = self.slots.get(name)
        if s is None:
            s = self.slots[name] = TensorState()
        return s


def safe_divide(a, b, eps):
    """Element-wise a / (b + eps*sgn(b)), where sgn(0) counts as +1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"safe_divide shapes differ: {a.shape} vs {b.shape}")
    guard = np.where(b < 0, -eps, eps)
    return a / (b + guard)


def pd_multiplier(grad, w, eps=EPS_DEFAULT):
    """Scalar size(w) / |g/w|_1 that rescales a whole gradient tensor.

    Zero gradient returns 0 so the caller applies a no-op instead of 0/0.
    The value is always >= 0: scaling by it never flips a direction.
    """
    norm = l1_norm(safe_divide(grad, w, eps))
    if norm == 0.0:
        return 0.0
    return np.asarray(w).size / norm


def delta_percent_delta(grad, w, schedule, t, eps=EPS_DEFAULT):
    """eta*gamma(t) * pd_multiplier * grad; mean |delta_i/w_i| = eta*gamma(t)."""
    g = np.asarray(grad, dtype=np.float64)
    mult = pd_multiplier(g, w, eps)
    return schedule.eta * gamma(schedule, t) * mult * g


def delta_sgd(grad, schedule, t):
    """Plain scaled gradient eta*gamma(t) * grad."""
    return schedule.eta * gamma(schedule, t) * np.asarray(grad, dtype=np.float64)


def delta_adagrad(grad, state, schedule, t, eps=EPS_DEFAULT):
    """Accumulate squared gradients, then divide: eta*gamma * g/(sqrt(S)+eps)."""
    g = np.asarray(grad, dtype=np.float64)
    if state.adagrad_sum is None:
        state.adagrad_sum = np.zeros_like(g)
    state.adagrad_sum += g * g
    return schedule.eta * gamma(schedule, t) * g / (np.sqrt(state.adagrad_sum) + eps)


def delta_adam(grad, state, schedule, t, beta1=0.9, beta2=0.999, eps=EPS_DEFAULT):
    """Bias-corrected moment estimates; t is 0-based, correction uses t+1."""
    g = np.asarray(grad, dtype=np.float64)
    if state.adam_m is None:
        state.adam_m = np.zeros_like(g)
        state.adam_v = np.zeros_like(g)
    state.adam_m[...] = beta1 * state.adam_m + (1.0 - beta1) * g
    state.adam_v[...] = beta2 * state.adam_v + (1.0 - beta2) * (g * g)
    tc = t + 1
    m_hat = state.adam_m / (1.0 - beta1 ** tc)
    v_hat = state.adam_v / (1.0 - beta2 ** tc)
    return schedule.eta * gamma(schedule, t) * m_hat / (np.sqrt(v_hat) + eps)


def delta_lars(grad, w, schedule, t, eps=EPS_DEFAULT):
    """Layer-wise L2 rescale: eta*gamma * (|w|_2 / (|g|_2 + eps)) * grad."""
    g = np.asarray(grad, dtype=np.float64)
    gn = l2_norm(g)
    if gn == 0.0:
        return np.zeros_like(g)
    return schedule.eta * gamma(schedule, t) * (l2_norm(w) / (gn + eps)) * g


def apply_momentum(state, delta, mu):
    """v <- mu*v + delta; returns a copy of the updated velocity."""
    d = np.asarray(delta, dtype=np.float64)
    if state.velocity is None:
        state.velocity = np.zeros_like(d)
    state.velocity[...] = mu * state.velocity + d
    return state.velocity.copy()


def _realized_multiplier(raw, grad, eta_gamma):
    """Magnitude ratio |raw|_1 / (eta*gamma*|g|_1) for element-wise rules."""
    denom = eta_gamma * l1_norm(grad)
    if denom == 0.0:
        return 0.0
    return l1_norm(raw) / denom


def step(rule, state, net, schedule, loss=0.0, test_accuracy=None):
    """Apply one update to every registered tensor; returns the StepRecords.

    The step counter advances once per call no matter how many tensors the
    net has. Records capture the pre-momentum delta, the applied update,
    and norms of the parameter as it stood before subtraction.
    """
    registered = {p.name for p in net.params}
    for name in state.slots:
        if name not in registered:
            raise KeyError(f"optimizer state holds unknown tensor {name!r}")

    t = state.t
    g_val = gamma(schedule, t)
    eta_gamma = schedule.eta * g_val
    records = []
    for p in net.params:
        w, g = p.value, p.grad
        slot = state.slot(p.name)
        if rule.variant == "percent_delta":
            raw = delta_percent_delta(g, w, schedule, t, rule.eps)
            multiplier = pd_multiplier(g, w, rule.eps)
        elif rule.variant == "lars":
            raw = delta_lars(g, w, schedule, t, rule.eps)
            gn = l2_norm(g)
            multiplier = l2_norm(w) / (gn + rule.eps) if gn > 0.0 else 0.0
        elif rule.variant in ("sgd", "momentum"):
            raw = delta_sgd(g, schedule, t)
            multiplier = 1.0
        elif rule.variant == "adagrad":
            raw = delta_adagrad(g, slot, schedule, t, rule.eps)
            multiplier = _realized_multiplier(raw, g, eta_gamma)
        else:
            raw = delta_adam(g, slot, schedule, t, rule.beta1, rule.beta2, rule.eps)
            multiplier = _realized_multiplier(raw, g, eta_gamma)

        if rule.variant in _WITH_MOMENTUM:
            applied = apply_momentum(slot, raw, rule.mu)
        else:
            applied = raw

        l1_w = l1_norm(w)
        mean_rel = float(np.mean(np.abs(safe_divide(raw, w, rule.eps)))) if w.size else 0.0
        records.append(StepRecord(
            step=t,
            tensor_name=p.name,
            l1_w=l1_w,
            l1_delta_raw=l1_norm(raw),
            l1_delta_applied=l1_norm(applied),
            rel_delta_raw=relative_delta(raw, w),
            rel_delta_applied=relative_delta(applied, w),
            mean_rel_delta_raw=mean_rel,
            multiplier=float(multiplier),
            gamma=g_val,
            loss=loss,
            test_accuracy=test_accuracy,
        ))
        p.value -= applied
    state.t += 1
    net.bump_version()
    return records
