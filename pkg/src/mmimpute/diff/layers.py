"""Layer constructors and forward functions over a :class:`ParamSet`.

Shape contracts:

=====================  ==================================  ==========================
kind                   params (prefix ``p``)               input -> output
=====================  ==================================  ==========================
affine                 p.w (in, out), p.b (out,)           (N, in) -> (N, out)
conv                   p.w (out, in, k, k), p.b (out,)     (N, in, H, W) -> (N, out, H', W')
transpose-conv         p.w (in, out, k, k), p.b (out,)     (N, in, H, W) -> (N, out, H', W')
gated-recurrent-cell   p.wx (in, 3h), p.wh (h, 3h),        (x (N, in), h (N, h)) -> (N, h)
                       p.bx (3h,), p.bh (3h,)
relu / leaky-relu /    none                                elementwise
sigmoid
=====================  ==================================  ==========================

Convolution output size is ``(H + 2*pad - k) // stride + 1``; transpose
convolution gives ``(H - 1) * stride - 2*pad + k``.
"""
import numpy as np

from mmimpute.diff import tensor as T


def _uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_affine(ps, prefix, n_in, n_out, rng, dtype=np.float32):
    ps.add(f"{prefix}.w", _uniform(rng, (n_in, n_out), n_in, dtype))
    ps.add(f"{prefix}.b", np.zeros(n_out, dtype=dtype))


def init_conv(ps, prefix, c_in, c_out, k, rng, dtype=np.float32):
    ps.add(f"{prefix}.w", _uniform(rng, (c_out, c_in, k, k), c_in * k * k, dtype))
    ps.add(f"{prefix}.b", np.zeros(c_out, dtype=dtype))


def init_tconv(ps, prefix, c_in, c_out, k, rng, dtype=np.float32):
    # each output pixel receives ~ c_in * k*k / stride^2 terms; use c_in*k*k/4
    ps.add(f"{prefix}.w", _uniform(rng, (c_in, c_out, k, k), max(1, c_in * k * k // 4), dtype))
    ps.add(f"{prefix}.b", np.zeros(c_out, dtype=dtype))


def init_gru(ps, prefix, n_in, n_hidden, rng, dtype=np.float32):
    ps.add(f"{prefix}.wx", _uniform(rng, (n_in, 3 * n_hidden), n_in, dtype) / np.sqrt(2.0).astype(dtype))
    ps.add(f"{prefix}.wh", _uniform(rng, (n_hidden, 3 * n_hidden), n_hidden, dtype) / np.sqrt(2.0).astype(dtype))
    ps.add(f"{prefix}.bx", np.zeros(3 * n_hidden, dtype=dtype))
    ps.add(f"{prefix}.bh", np.zeros(3 * n_hidden, dtype=dtype))


def affine(ps, prefix, x):
    return T.affine(x, ps[f"{prefix}.w"], ps[f"{prefix}.b"])


def conv(ps, prefix, x, stride=2, pad=1):
    return T.conv2d(x, ps[f"{prefix}.w"], ps[f"{prefix}.b"], stride, pad)


def tconv(ps, prefix, x, stride=2, pad=1):
    return T.conv_transpose2d(x, ps[f"{prefix}.w"], ps[f"{prefix}.b"], stride, pad)


def gru_cell(ps, prefix, x, h):
    """Gated recurrent cell (update gate z, reset gate r, candidate n)."""
    nh = h.shape[1]
    gx = T.affine(x, ps[f"{prefix}.wx"], ps[f"{prefix}.bx"])
    gh = T.affine(h, ps[f"{prefix}.wh"], ps[f"{prefix}.bh"])
    r = T.sigmoid(T.take(gx, slice(0, nh), 1) + T.take(gh, slice(0, nh), 1))
    z = T.sigmoid(T.take(gx, slice(nh, 2 * nh), 1) + T.take(gh, slice(nh, 2 * nh), 1))
    n = T.tanh(T.take(gx, slice(2 * nh, 3 * nh), 1) + r * T.take(gh, slice(2 * nh, 3 * nh), 1))
    return n + z * (h - n)


def layer_forward(kind, ps, x, prefix="", **kw):
    """Dispatch by layer kind name; ``x`` is a Tensor (or (x, h) for the GRU)."""
    if kind == "affine":
        w = ps[f"{prefix}.w"]
        if x.shape[-1] != w.shape[0]:
            raise ValueError(f"affine {prefix!r}: input width {x.shape[-1]} != {w.shape[0]}")
        return affine(ps, prefix, x)
    if kind == "conv":
        return conv(ps, prefix, x, **kw)
    if kind == "transpose-conv":
        return tconv(ps, prefix, x, **kw)
    if kind == "gated-recurrent-cell":
        xi, h = x
        return gru_cell(ps, prefix, xi, h)
    if kind == "relu":
        return T.relu(x)
    if kind == "leaky-relu":
        return T.leaky_relu(x, kw.get("slope", 0.2))
    if kind == "sigmoid":
        return T.sigmoid(x)
    raise ValueError(f"unknown layer kind {kind!r}")
