"""Pure numpy versions of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable or when
``MMIMPUTE_PURE_PYTHON=1`` is set. Signatures match the extension exactly.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride):
    """Patch matrix of shape (N*Ho*Wo, C*k*k) from a padded NCHW array."""
    n, c, hp, wp = xp.shape
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def col2im(cols, n, c, hp, wp, k, stride):
    """Scatter-add inverse of :func:`im2col` (adjoint, not inverse)."""
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(k):
        hi = i + stride * (ho - 1) + 1
        for j in range(k):
            wj = j + stride * (wo - 1) + 1
            out[:, :, i:hi:stride, j:wj:stride] += cols[:, :, i, j]
    return out


def grouped_auc(counts, group, labels, n_groups):
    """AUC per row of ``counts`` (subject multiplicities).

    ``group`` holds the ascending tie-group index of every subject's score.
    Ties get half credit.
    """
    counts = np.asarray(counts, dtype=np.float64)
    n = group.shape[0]
    onehot = np.zeros((n, n_groups))
    onehot[np.arange(n), group] = 1.0
    pos = labels.astype(bool)
    p = counts[:, pos] @ onehot[pos]
    q = counts[:, ~pos] @ onehot[~pos]
    below = np.cumsum(q, axis=1) - q
    num = (p * (below + 0.5 * q)).sum(axis=1)
    den = p.sum(axis=1) * q.sum(axis=1)
    return num / den
