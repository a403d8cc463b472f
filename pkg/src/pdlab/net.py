"""Layer-sequence networks over the float64 kernels.

A Network is an ordered list of layer specs plus a registry of named
parameter tensors, each paired with a same-shape gradient buffer. The
registry order follows construction order and is stable across runs, so a
seed pins the exact initial parameter bytes.

Backward fills every gradient buffer analytically; ``grad_check`` verifies
them entry-by-entry against central finite differences of the loss.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import Xoshiro256, derive_seed


class StaleCacheError(RuntimeError):
    """A forward cache is being reused after the parameters changed."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kh: int = 0
    kw: int = 0
    cin: int = 0
    cout: int = 0
    fan_in: int = 0
    fan_out: int = 0

    @staticmethod
    def conv(kh, kw, cin, cout):
        return LayerSpec("conv", kh=kh, kw=kw, cin=cin, cout=cout)

    @staticmethod
    def maxpool2():
        return LayerSpec("maxpool2")

    @staticmethod
    def flatten():
        return LayerSpec("flatten")

    @staticmethod
    def dense(fan_in, fan_out):
        return LayerSpec("dense", fan_in=fan_in, fan_out=fan_out)

    @staticmethod
    def relu():
        return LayerSpec("relu")

    @staticmethod
    def sigmoid():
        return LayerSpec("sigmoid")


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray

    @property
    def size(self):
        return int(self.value.size)


@dataclass(frozen=True)
class InitPolicy:
    """Truncated-normal weights (clipped at 2 sigma), constant biases.

    The nonzero bias default keeps weight/parameter ratios finite at step
    zero for update rules that divide by the current value.
    """

    weight_stddev: float = 0.1
    bias_constant: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.weight_stddev <= 0:
            raise ValueError(f"weight_stddev must be positive, got {self.weight_stddev}")


class Network:
    """Ordered layers plus the named parameter/gradient registry."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.params = []
        self._by_name = {}
        self.version = 0
        self._build_registry()

    def _add(self, name, shape):
        value = np.zeros(shape, dtype=np.float64)
        grad = np.zeros(shape, dtype=np.float64)
        p = Param(name, value, grad)
        self.params.append(p)
        self._by_name[name] = p
        return p

    def _build_registry(self):
        shape = self.input_shape
        conv_i = fc_i = 0
        for spec in self.layers:
            if spec.kind == "conv":
                if len(shape) != 3 or shape[2] != spec.cin:
                    raise T.ShapeError(f"conv expects [H,W,{spec.cin}] activations, got {shape}")
                self._add(f"conv{conv_i}/kernel", (spec.kh, spec.kw, spec.cin, spec.cout))
                self._add(f"conv{conv_i}/bias", (spec.cout,))
                conv_i += 1
                shape = (shape[0], shape[1], spec.cout)
            elif spec.kind == "maxpool2":
                if len(shape) != 3 or shape[0] % 2 or shape[1] % 2:
                    raise T.ShapeError(f"maxpool2 expects even [H,W,C] activations, got {shape}")
                shape = (shape[0] // 2, shape[1] // 2, shape[2])
            elif spec.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif spec.kind == "dense":
                if len(shape) != 1 or shape[0] != spec.fan_in:
                    raise T.ShapeError(f"dense expects [{spec.fan_in}] activations, got {shape}")
                self._add(f"fc{fc_i}/weight", (spec.fan_in, spec.fan_out))
                self._add(f"fc{fc_i}/bias", (spec.fan_out,))
                fc_i += 1
                shape = (spec.fan_out,)
            elif spec.kind in ("relu", "sigmoid"):
                pass
            else:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
        self.output_shape = shape

    def param(self, name):
        return self._by_name[name]

    def param_count(self):
        return sum(p.size for p in self.params)

    def zero_grads(self):
        for p in self.params:
            p.grad[...] = 0.0

    def bump_version(self):
        self.version += 1


def build_mnist_net():
    """Two conv+pool stages then two dense layers, 10-way output."""
    layers = [
        LayerSpec.conv(5, 5, 1, 32),
        LayerSpec.relu(),
        LayerSpec.maxpool2(),
        LayerSpec.conv(5, 5, 32, 64),
        LayerSpec.relu(),
        LayerSpec.maxpool2(),
        LayerSpec.flatten(),
        LayerSpec.dense(3136, 1024),
        LayerSpec.relu(),
        LayerSpec.dense(1024, 10),
    ]
    return Network(layers, (28, 28, 1))


def build_reduced_net():
    """Small conv+dense net sized so finite-difference checks stay cheap."""
    layers = [
        LayerSpec.conv(3, 3, 1, 4),
        LayerSpec.relu(),
        LayerSpec.maxpool2(),
        LayerSpec.flatten(),
        LayerSpec.dense(64, 8),
    ]
    return Network(layers, (8, 8, 1))


def build_dense_chain(depth, width, activation):
    """Uniform-width dense chain with the given activation after each layer."""
    if activation not in ("relu", "sigmoid"):
        raise ValueError(f"unknown activation {activation!r}")
    act = LayerSpec.relu if activation == "relu" else LayerSpec.sigmoid
    layers = []
    for _ in range(depth):
        layers.append(LayerSpec.dense(width, width))
        layers.append(act())
    return Network(layers, (width,))


def init(net, policy):
    """Fill the registry from one seeded stream, in registry order.

    Weight tensors draw truncated normals; bias tensors are set to the
    policy constant and consume no randomness. Same seed, same bytes.
    """
    rng = Xoshiro256(policy.seed)
    for p in net.params:
        if p.name.endswith("/bias"):
            p.value[...] = policy.bias_constant
        else:
            draws = rng.truncated_normals(p.size, policy.weight_stddev)
            p.value[...] = draws.reshape(p.value.shape)
    net.bump_version()
    return net


@dataclass
class ForwardCache:
    version: int
    batch_size: int
    saves: list
    loss: float
    dlogits: np.ndarray


def _forward_logits(net, x, saves=None):
    conv_i = fc_i = 0
    for spec in net.layers:
        if spec.kind == "conv":
            k = net.param(f"conv{conv_i}/kernel").value
            b = net.param(f"conv{conv_i}/bias").value
            conv_i += 1
            if saves is not None:
                saves.append(x)
            x = T.conv2d_forward(x, k, b)
        elif spec.kind == "maxpool2":
            x, idx = T.maxpool2_forward(x)
            if saves is not None:
                saves.append(idx)
        elif spec.kind == "flatten":
            if saves is not None:
                saves.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif spec.kind == "dense":
            w = net.param(f"fc{fc_i}/weight").value
            b = net.param(f"fc{fc_i}/bias").value
            fc_i += 1
            if saves is not None:
                saves.append(x)
            x = x @ w + b
        elif spec.kind == "relu":
            mask = T.relu_mask(x)
            if saves is not None:
                saves.append(mask)
            x = x * mask
        elif spec.kind == "sigmoid":
            x = T.sigmoid(x)
            if saves is not None:
                saves.append(x)
    return x


def predict_logits(net, images):
    """Forward pass without loss or cache, for evaluation."""
    return _forward_logits(net, np.asarray(images, dtype=np.float64))


def forward(net, images, labels):
    """Run the net and the softmax loss; returns (loss, cache) for backward."""
    saves = []
    logits = _forward_logits(net, np.asarray(images, dtype=np.float64), saves)
    loss, dlogits = T.softmax_xent(logits, labels)
    cache = ForwardCache(net.version, logits.shape[0], saves, loss, dlogits)
    return loss, cache


def backward(net, cache):
    """Fill every parameter's grad buffer from a fresh forward cache."""
    if cache.version != net.version:
        raise StaleCacheError("forward cache predates a parameter update; rerun forward")
    conv_i = sum(1 for s in net.layers if s.kind == "conv")
    fc_i = sum(1 for s in net.layers if s.kind == "dense")
    d = cache.dlogits
    saves = list(cache.saves)
    for layer_index in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[layer_index]
        if spec.kind == "conv":
            conv_i -= 1
            x = saves.pop()
            kernel = net.param(f"conv{conv_i}/kernel")
            bias = net.param(f"conv{conv_i}/bias")
            dx, dk, db = T.conv2d_backward(x, kernel.value, d, need_dx=layer_index > 0)
            kernel.grad[...] = dk
            bias.grad[...] = db
            d = dx
        elif spec.kind == "maxpool2":
            idx = saves.pop()
            d = T.maxpool2_backward(d, idx)
        elif spec.kind == "flatten":
            orig_shape = saves.pop()
            d = d.reshape(orig_shape)
        elif spec.kind == "dense":
            fc_i -= 1
            x = saves.pop()
            weight = net.param(f"fc{fc_i}/weight")
            bias = net.param(f"fc{fc_i}/bias")
            weight.grad[...] = x.T @ d
            bias.grad[...] = d.sum(axis=0)
            d = d @ weight.value.T if layer_index > 0 else None
        elif spec.kind == "relu":
            mask = saves.pop()
            d = d * mask
        elif spec.kind == "sigmoid":
            y = saves.pop()
            d = d * (y * (1.0 - y))


def central_difference(f, x, h):
    """Two-sided difference quotient (f(x+h) - f(x-h)) / 2h."""
    return (f(x + h) - f(x - h)) / (2.0 * h)


@dataclass
class TensorCheck:
    name: str
    max_rel_error: float
    worst_index: int
    flagged: int
    total: int


@dataclass
class GradCheckReport:
    tolerance: float
    h: float
    per_tensor: list
    max_rel_error: float = 0.0
    worst_name: str = ""
    n_flagged: int = 0
    n_total: int = 0

    @property
    def passed(self):
        return self.n_flagged == 0

    def lines(self):
        out = [f"grad check: h={self.h:g} tolerance={self.tolerance:g}"]
        for row in self.per_tensor:
            out.append(
                f"  {row.name:16s} max_rel={row.max_rel_error:.3e} "
                f"flagged={row.flagged}/{row.total}"
            )
        status = "OK" if self.passed else "FAIL"
        out.append(
            f"  -> {status}: max_rel={self.max_rel_error:.3e} at {self.worst_name}, "
            f"{self.n_flagged}/{self.n_total} entries over tolerance"
        )
        return out

    def __str__(self):
        return "\n".join(self.lines())


def grad_check(net, batch, h=1e-5, tolerance=1e-4):
    """Compare analytic gradients to central differences, entry by entry.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8) so
    exactly-zero pairs compare clean and tiny values do not blow up.
    """
    images, labels = batch
    _, cache = forward(net, images, labels)
    backward(net, cache)
    analytic = {p.name: p.grad.copy() for p in net.params}

    report = GradCheckReport(tolerance=tolerance, h=h, per_tensor=[])
    for p in net.params:
        flat = p.value.reshape(-1)
        worst = 0.0
        worst_i = 0
        flagged = 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            jp, _ = forward(net, images, labels)
            flat[i] = orig - h
            jm, _ = forward(net, images, labels)
            flat[i] = orig
            numeric = (jp - jm) / (2.0 * h)
            a = analytic[p.name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > tolerance:
                flagged += 1
            if rel > worst:
                worst, worst_i = rel, i
        report.per_tensor.append(TensorCheck(p.name, worst, worst_i, flagged, flat.size))
        report.n_flagged += flagged
        report.n_total += flat.size
        if worst > report.max_rel_error:
            report.max_rel_error = worst
            report.worst_name = p.name
    return report


@dataclass
class DisproportionRow:
    layer_index: int
    tensor_name: str
    l1_grad: float
    l1_grad_per_entry: float
    ratio_to_last: float = 1.0


@dataclass
class DisproportionReport:
    rows: list
    ratio_first_to_last: float

    @property
    def spread(self):
        """How far the first/last gradient ratio sits from parity."""
        r = self.ratio_first_to_last
        return max(r, 1.0 / r) if r > 0 else float("inf")

    def lines(self):
        out = ["layer  tensor            l1_grad        l1_grad/entry  ratio_to_last"]
        for row in self.rows:
            out.append(
                f"{row.layer_index:5d}  {row.tensor_name:16s} "
                f"{row.l1_grad:<13.6e}  {row.l1_grad_per_entry:<13.6e}  {row.ratio_to_last:.6e}"
            )
        out.append(f"first/last per-entry ratio: {self.ratio_first_to_last:.6e}")
        return out

    def __str__(self):
        return "\n".join(self.lines())

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("layer_index,tensor_name,l1_grad,l1_grad_per_entry,ratio_to_last\n")
            for row in self.rows:
                fh.write(
                    f"{row.layer_index},{row.tensor_name},"
                    f"{row.l1_grad:.17g},{row.l1_grad_per_entry:.17g},"
                    f"{row.ratio_to_last:.17g}\n"
                )


def disproportion_report(depth, width, activation, init_stddev, seed, batch=32):
    """Per-layer gradient magnitudes of a dense chain at initialization.

    Rows cover the weight matrices only; bias vectors stay registered and
    trained but are left out of the table so per-entry magnitudes compare
    like against like.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    net = build_dense_chain(depth, width, activation)
    init(net, InitPolicy(weight_stddev=init_stddev, bias_constant=0.1,
                         seed=derive_seed(seed, 1)))
    rng = Xoshiro256(derive_seed(seed, 2))
    images = rng.uniforms(batch * width).reshape(batch, width)
    labels = [i % width for i in range(batch)]
    _, cache = forward(net, images, labels)
    backward(net, cache)

    weights = [p for p in net.params if p.name.endswith("/weight")]
    per_entry = [T.l1_norm(p.grad) / p.size for p in weights]
    last = per_entry[-1]
    rows = [
        DisproportionRow(
            layer_index=i,
            tensor_name=p.name,
            l1_grad=T.l1_norm(p.grad),
            l1_grad_per_entry=per_entry[i],
            ratio_to_last=per_entry[i] / last if last > 0 else float("inf"),
        )
        for i, p in enumerate(weights)
    ]
    ratio = rows[0].ratio_to_last
    return DisproportionReport(rows=rows, ratio_first_to_last=ratio)
