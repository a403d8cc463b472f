"""Dense float64 tensor kernels.

A tensor here is a C-order ``numpy.ndarray`` of float64; ``shape`` and the
flat row-major buffer are exactly numpy's. All kernels are pure functions
and deterministic: repeated calls on identical inputs return bit-identical
outputs (BLAS-backed products use a fixed accumulation order per process).

Convolution is cross-correlation (no kernel flip) with SAME zero padding
and stride 1; kernel spatial dims must be odd so padding is symmetric.
Pooling is 2x2 windows with stride 2, ties resolved to the lowest
row-major index inside the window.
"""

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


def as_tensor(x):
    """Coerce to a C-order float64 ndarray."""
    return np.ascontiguousarray(x, dtype=np.float64)


def tensor_size(a):
    """Number of entries: product of the dimensions, 1 for a scalar."""
    return int(np.asarray(a).size)


def matmul(a, b):
    """Matrix product of rank-2 tensors [m,k] x [k,n] -> [m,n]."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a, b):
    """Element-wise product of same-shape tensors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard needs identical shapes, got {a.shape} and {b.shape}")
    return a * b


def l1_norm(a):
    """Sum of absolute entries; 0.0 for an empty tensor."""
    return float(np.abs(np.asarray(a)).sum())


def l2_norm(a):
    """sqrt of the sum of squared entries; 0.0 for an empty tensor."""
    a = np.asarray(a)
    return float(np.sqrt((a * a).sum()))


def relu(x):
    return np.maximum(np.asarray(x), 0.0)


def relu_mask(x):
    """1.0 where x > 0 else 0.0; the derivative at 0 is taken as 0."""
    return (np.asarray(x) > 0).astype(np.float64)


def sigmoid(x):
    """Logistic function, evaluated piecewise so large |x| cannot overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_deriv(y):
    """Derivative expressed through the sigmoid output y: y * (1 - y)."""
    y = np.asarray(y)
    return y * (1.0 - y)


# Batch chunking bound for the im2col buffer (bytes). 128 MiB keeps peak
# memory modest without hurting GEMM efficiency.
_COL_BUFFER_BYTES = 128 * 2 ** 20


def _conv_chunk(batch, h, w, kh, kw, cin):
    per_example = h * w * kh * kw * cin * 8
    return max(1, min(batch, _COL_BUFFER_BYTES // max(per_example, 1)))


def _check_conv_args(x, k, bias):
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d needs [B,H,W,Cin] input and [kh,kw,Cin,Cout] kernel, got {x.shape} and {k.shape}")
    kh, kw, cin, cout = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel spatial dims must be odd, got {k.shape}")
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {k.shape}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")


def _im2col(xp, kh, kw, out_h, out_w):
    """Patch matrix [b*H*W, Cin*kh*kw] from a padded [b,Hp,Wp,Cin] block."""
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # view: [b, H, W, Cin, kh, kw]; flattening keeps (Cin, kh, kw) order.
    b = xp.shape[0]
    cin = xp.shape[3]
    return view.reshape(b * out_h * out_w, cin * kh * kw)


def _kernel_cols(k):
    """Kernel reshaped to [Cin*kh*kw, Cout] to match the im2col layout."""
    kh, kw, cin, cout = k.shape
    return np.ascontiguousarray(k.transpose(2, 0, 1, 3)).reshape(cin * kh * kw, cout)


def conv2d_forward(x, k, bias=None):
    """SAME stride-1 cross-correlation plus bias broadcast over channels."""
    x = np.asarray(x)
    k = np.asarray(k)
    bias = None if bias is None else np.asarray(bias)
    _check_conv_args(x, k, bias)
    batch, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    kc = _kernel_cols(k)
    out = np.empty((batch, h, w, cout), dtype=np.float64)
    step = _conv_chunk(batch, h, w, kh, kw, cin)
    for lo in range(0, batch, step):
        hi = min(lo + step, batch)
        cols = _im2col(xp[lo:hi], kh, kw, h, w)
        out[lo:hi] = (cols @ kc).reshape(hi - lo, h, w, cout)
    if bias is not None:
        out += bias
    return out


def conv2d_backward(x, k, dout, need_dx=True):
    """Gradients of conv2d_forward w.r.t. input, kernel, and bias.

    Returns (dx, dk, dbias); dx is None when need_dx is False (saves the
    transposed convolution for the network's first layer).
    """
    x = np.asarray(x)
    k = np.asarray(k)
    dout = np.asarray(dout)
    batch, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    ph, pw = kh // 2, kw // 2
    dbias = dout.sum(axis=(0, 1, 2))

    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    dk_cols = np.zeros((cin * kh * kw, cout), dtype=np.float64)
    step = _conv_chunk(batch, h, w, kh, kw, cin)
    for lo in range(0, batch, step):
        hi = min(lo + step, batch)
        cols = _im2col(xp[lo:hi], kh, kw, h, w)
        dk_cols += cols.T @ dout[lo:hi].reshape((hi - lo) * h * w, cout)
    dk = dk_cols.reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
    dk = np.ascontiguousarray(dk)

    dx = None
    if need_dx:
        # Input gradient is the correlation of dout with the spatially
        # rotated, channel-transposed kernel (exact for odd SAME kernels).
        k_rot = np.ascontiguousarray(k[::-1, ::-1].transpose(0, 1, 3, 2))
        dx = conv2d_forward(dout, k_rot)
    return dx, dk, dbias


def maxpool2_forward(x):
    """2x2/stride-2 max pooling; returns (pooled, window argmax indices)."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2 needs [B,H,W,C] input, got {x.shape}")
    batch, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {x.shape}")
    windows = x.reshape(batch, h // 2, 2, w // 2, 2, c)
    windows = windows.transpose(0, 1, 3, 5, 2, 4).reshape(batch, h // 2, w // 2, c, 4)
    idx = windows.argmax(axis=-1)  # first maximum wins on ties
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(dout, idx):
    """Route pooled gradients back to the argmax positions."""
    dout = np.asarray(dout)
    batch, h2, w2, c = dout.shape
    windows = np.zeros((batch, h2, w2, c, 4), dtype=np.float64)
    np.put_along_axis(windows, idx[..., None], dout[..., None], axis=-1)
    windows = windows.reshape(batch, h2, w2, c, 2, 2)
    return windows.transpose(0, 1, 4, 2, 5, 3).reshape(batch, h2 * 2, w2 * 2, c)


def softmax_xent(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns (loss, dlogits) with dlogits = (softmax - onehot) / batch,
    computed through the log-sum-exp shift so large logits stay finite.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_xent needs [B,K] logits, got {logits.shape}")
    batch, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch,):
        raise ShapeError(f"softmax_xent needs {batch} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"label {bad} out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    lse = np.log(exp.sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = float(-logp[np.arange(batch), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch
    return loss, dlogits
