"""Tape-free reverse-mode autodiff over numpy arrays.

Each op returns a :class:`Tensor` holding its parents and a closure that maps
the output gradient to parent gradients. ``Tensor.backward`` walks the graph in
reverse topological order. Constants (``requires_grad=False`` leaves and any
result built only from them) record no graph at all.
"""
import numpy as np

from mmimpute import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_ufunc__ = None  # make ndarray (op) Tensor defer to Tensor

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# When a list, piecewise ops append their branch pattern (used by grad_check
# to skip finite differences that straddle a kink).
KINK_LOG = None


def _log_kink(mask):
    if KINK_LOG is not None:
        KINK_LOG.append(np.packbits(mask).tobytes())


def _node(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _coerce(a, b):
    a, b = as_tensor(a), as_tensor(b)
    # python scalars / constants follow the tensor dtype
    if not a.requires_grad and a.data.ndim == 0:
        a = Tensor(a.data.astype(b.dtype))
    if not b.requires_grad and b.data.ndim == 0:
        b = Tensor(b.data.astype(a.dtype))
    return a, b


def add(a, b):
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def affine(x, w, b):
    """``x @ w + b`` for x (N, in), w (in, out), b (out,)."""
    xd, wd = x.data, w.data

    def back(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0, dtype=np.float64).astype(g.dtype)

    return _node(xd @ wd + b.data, (x, w, b), back)


def reshape(x, shape):
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), back)


def take(x, index, axis=0):
    """``x`` sliced along ``axis`` with a basic index (int or slice)."""
    sl = [slice(None)] * x.data.ndim
    sl[axis] = index
    sl = tuple(sl)
    shape = x.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[sl] = g
        return (out,)

    return _node(x.data[sl], (x,), back)


def broadcast_to(x, shape):
    old = x.shape
    return _node(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, old),))


def sum(x, axis=None):  # noqa: A001
    shape = x.shape
    out = x.data.sum(axis=axis, dtype=np.float64).astype(x.dtype)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype),)

    return _node(out, (x,), back)


def mean(x, axis=None):
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def relu(x):
    pos = x.data > 0
    _log_kink(pos)
    return _node(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


def leaky_relu(x, slope=0.2):
    xd = x.data
    _log_kink(xd > 0)
    scale = np.where(xd > 0, 1.0, slope).astype(x.dtype)
    return _node(xd * scale, (x,), lambda g: (g * scale,))


def sigmoid(x):
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (x,), lambda g: (g * out * (1 - out),))


def log_sigmoid(x):
    """``log(sigmoid(x))`` without overflow; gradient ``sigmoid(-x)``."""
    xd = x.data
    out = (-np.logaddexp(0.0, -xd)).astype(x.dtype)
    return _node(out, (x,), lambda g: (g * np.exp(out - xd),))


def tanh(x):
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1 - out * out),))


def square(x):
    xd = x.data
    return _node(xd * xd, (x,), lambda g: (2 * g * xd,))


def log(x):
    xd = x.data
    return _node(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x, lo, hi):
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    _log_kink(inside)
    return _node(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def log_softmax(x):
    """Row-wise log-softmax over the last axis."""
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _node(out, (x,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def pick(x, index):
    """``x[arange(N), index]`` for a 2-D ``x``."""
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[rows, index] = g
        return (out,)

    return _node(x.data[rows, index], (x,), back)


def conv2d(x, w, b, stride=1, pad=0):
    """NCHW convolution; w is (out, in, k, k)."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    if w.shape[1] != c:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {w.shape[1]}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x.data)
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < k or wp < k:
        raise ValueError(f"conv2d: padded input {hp}x{wp} smaller than kernel {k}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    cols = kernels.im2col(xp, k, stride)
    wm = w.data.reshape(o, -1)
    out = (cols @ wm.T + b.data).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        dw = (g2.T @ cols).reshape(w.shape)
        db = g2.sum(axis=0, dtype=np.float64).astype(g.dtype)
        dxp = kernels.col2im(g2 @ wm, n, c, hp, wp, k, stride)
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        return dx, dw, db

    return _node(np.ascontiguousarray(out), (x, w, b), back)


def conv_transpose2d(x, w, b, stride=1, pad=0):
    """Adjoint of :func:`conv2d` plus bias; w is (in, out, k, k)."""
    n, c, h, wd = x.shape
    if w.shape[0] != c:
        raise ValueError(f"conv_transpose2d: input has {c} channels, kernel expects {w.shape[0]}")
    _, o, k, _ = w.shape
    hp, wp = (h - 1) * stride + k, (wd - 1) * stride + k
    xm = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, c)
    wm = w.data.reshape(c, -1)
    full = kernels.col2im(xm @ wm, n, o, hp, wp, k, stride)
    out = full[:, :, pad:hp - pad, pad:wp - pad] + b.data.reshape(1, -1, 1, 1)

    def back(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(g)
        gcols = kernels.im2col(gp, k, stride)
        dx = (gcols @ wm.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        dw = (xm.T @ gcols).reshape(w.shape)
        db = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
        return np.ascontiguousarray(dx), dw, db

    return _node(np.ascontiguousarray(out), (x, w, b), back)
