"""Log-likelihood losses with the probability clamp used throughout."""
import numpy as np

from mmimpute.diff import tensor as T

EPS_P = 1e-7


def log_clamped(p):
    """``log(clip(p, EPS_P, 1 - EPS_P))``; zero gradient where clipped."""
    p = T.as_tensor(p)
    return T.log(T.clip(p, EPS_P, 1.0 - EPS_P))


def log_prob_logits(logits, target):
    """Log-probability of the 0/1 target under a Bernoulli with logit ``logits``.

    Computed in logit space, so gradients survive where a clamped
    probability would sit flat at ``EPS_P``.
    """
    logits = T.as_tensor(logits)
    return T.log_sigmoid(logits) if target else T.log_sigmoid(-logits)


def bce_loss(p, target):
    """Mean binary cross-entropy of probabilities ``p`` against 0/1 targets."""
    p = T.as_tensor(p)
    t = np.asarray(target, dtype=p.dtype)
    one = np.ones_like(t)
    ll = log_clamped(p) * t + log_clamped(1.0 - p) * (one - t)
    return -T.mean(ll)


def ce_loss(logits, labels):
    """Mean softmax cross-entropy; ``labels`` are integer class indices."""
    labels = np.asarray(labels, dtype=np.int64)
    return -T.mean(T.pick(T.log_softmax(T.as_tensor(logits)), labels))


def ce_from_probs(probs, labels):
    """Mean cross-entropy when the model already outputs class probabilities."""
    labels = np.asarray(labels, dtype=np.int64)
    return -T.mean(log_clamped(T.pick(T.as_tensor(probs), labels)))


def mse_masked(x_hat, x, m):
    """Mean squared error over entries with ``m == 1`` (per-sample mean, then batch mean)."""
    m = np.asarray(m, dtype=x_hat.dtype)
    diff = (x_hat - np.asarray(x, dtype=x_hat.dtype)) * m
    axes = tuple(range(1, m.ndim))
    per = m.sum(axis=axes).astype(np.float64)
    w = (1.0 / np.maximum(per, 1.0)).astype(x_hat.dtype)
    sq = T.square(diff)
    flat = T.reshape(sq, (sq.shape[0], -1))
    return T.mean(T.sum(flat, axis=1) * w)
