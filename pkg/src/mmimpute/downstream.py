"""Multi-modal longitudinal risk model, AUC and the paired bootstrap test.

MLM layout (desk scale)::

    image path : per-timepoint conv encoder (shared over TP0/TP1, 2 stride-2
                 stages + affine) -> GRU cell over (TP0, TP1) -> h_img
    factor path: 4 affine layers -> h_fac
    head       : affine over concat(h_img, h_fac) -> 2 logits

``paths`` selects "both", "image" or "factors"; single-path variants are
separately trained models without the other path.
"""
import csv
import io
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from mmimpute import kernels
from mmimpute.diff import layers as L
from mmimpute.diff import tensor as T
from mmimpute.diff.losses import ce_loss
from mmimpute.diff.optim import AdamConfig, adam_step
from mmimpute.diff.params import ParamSet, TrainingError
from mmimpute.rng import make_rng

MLM_DEFAULTS = {"channels": (4, 8), "img_feat": 16, "hidden": 16, "factor_hidden": 32, "factor_out": 16}
PATHS = ("both", "image", "factors")


# -------------------------------------------------------------------- AUC

def _groups(scores):
    scores = np.asarray(scores, dtype=np.float64)
    uniq, inv = np.unique(scores, return_inverse=True)
    return inv.astype(np.int64), len(uniq)


def _check_labels(labels):
    labels = np.asarray(labels).astype(np.int64).ravel()
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary 0/1")
    if labels.min() == labels.max():
        raise ValueError("AUC needs both classes present")
    return labels


def auc(scores, labels):
    """P(random positive outranks random negative), ties counted 1/2."""
    labels = _check_labels(labels)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    g, k = _groups(scores)
    return float(kernels.grouped_auc(np.ones((1, len(g))), g, labels, k)[0])


def auc_pairwise(scores, labels):
    """O(n^2) reference."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0) + 0.5 * (diff == 0)).sum() / (len(pos) * len(neg)))


def bootstrap_pvalue(scores_a, scores_b, labels, n=2000, seed=0, max_redraws=10000):
    """Two-tailed paired bootstrap p-value for AUC(a) - AUC(b).

    Subjects are resampled with replacement; resamples holding a single class
    are redrawn (at most ``max_redraws`` times in total). The p-value is
    ``min(1, 2 * min(P(d <= 0), P(d >= 0)))`` over the bootstrap deltas.
    """
    labels = _check_labels(labels)
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if not (a.shape == b.shape == labels.shape):
        raise ValueError("paired scores and labels must share one length")
    m = len(labels)
    rng = make_rng("bootstrap", seed)
    counts = np.empty((n, m))
    filled, redraws = 0, 0
    while filled < n:
        idx = rng.integers(0, m, size=m)
        c = np.bincount(idx, minlength=m)
        npos = c[labels == 1].sum()
        if npos == 0 or npos == m:
            redraws += 1
            if redraws > max_redraws:
                raise RuntimeError("bootstrap: too many single-class resamples")
            continue
        counts[filled] = c
        filled += 1
    ga, ka = _groups(a)
    gb, kb = _groups(b)
    delta = kernels.grouped_auc(counts, ga, labels, ka) - kernels.grouped_auc(counts, gb, labels, kb)
    p = 2.0 * min(np.mean(delta <= 0), np.mean(delta >= 0))
    return float(min(1.0, p))


# ------------------------------------------------------------------ MLM

@dataclass
class MlmModel:
    params: ParamSet
    paths: str = "both"
    best_epoch: int = 0
    val_auc: float = float("nan")

    def logits(self, factors, tp0, tp1):
        return mlm_forward(self.params, self.paths, factors, tp0, tp1)

    def scores(self, factors, tp0, tp1, batch_size=512):
        out = []
        for s in range(0, len(factors), batch_size):
            sl = slice(s, s + batch_size)
            lg = self.logits(factors[sl], tp0[sl], tp1[sl]).data.astype(np.float64)
            out.append(lg[:, 1] - lg[:, 0])
        return np.concatenate(out)


def init_mlm(seed, paths="both", n_factors=14, cfg=None):
    if paths not in PATHS:
        raise ValueError(f"paths must be one of {PATHS}")
    cfg = dict(MLM_DEFAULTS, **(cfg or {}))
    ps = ParamSet()
    rng = make_rng("mlm-init", seed)
    width = 0
    if paths in ("both", "image"):
        c1, c2 = cfg["channels"]
        L.init_conv(ps, "img.conv1", 1, c1, 4, rng)
        L.init_conv(ps, "img.conv2", c1, c2, 4, rng)
        L.init_affine(ps, "img.fc", c2 * 64, cfg["img_feat"], rng)
        L.init_gru(ps, "img.gru", cfg["img_feat"], cfg["hidden"], rng)
        width += cfg["hidden"]
    if paths in ("both", "factors"):
        h, o = cfg["factor_hidden"], cfg["factor_out"]
        dims = [n_factors, h, h, h, o]
        for i in range(4):
            L.init_affine(ps, f"fac.fc{i}", dims[i], dims[i + 1], rng)
        width += o
    L.init_affine(ps, "head", width, 2, rng)
    return ps


def _timepoint_features(ps, x):
    h = T.leaky_relu(L.conv(ps, "img.conv1", T.as_tensor(np.asarray(x, np.float32))))
    h = T.leaky_relu(L.conv(ps, "img.conv2", h))
    return T.leaky_relu(L.affine(ps, "img.fc", T.reshape(h, (h.shape[0], -1))))


def mlm_forward(ps, paths, factors, tp0, tp1):
    feats = []
    n = len(factors)
    if paths in ("both", "image"):
        both = np.concatenate([np.asarray(tp0, np.float32), np.asarray(tp1, np.float32)])
        f = _timepoint_features(ps, both)
        f0, f1 = T.take(f, np.arange(n), 0), T.take(f, np.arange(n, 2 * n), 0)
        h = T.Tensor(np.zeros((n, ps["img.gru.wh"].shape[0]), np.float32))
        h = L.gru_cell(ps, "img.gru", f0, h)
        h = L.gru_cell(ps, "img.gru", f1, h)
        feats.append(h)
    if paths in ("both", "factors"):
        h = T.as_tensor(np.asarray(factors, np.float32))
        for i in range(3):
            h = T.leaky_relu(L.affine(ps, f"fac.fc{i}", h))
        feats.append(T.leaky_relu(L.affine(ps, "fac.fc3", h)))
    z = feats[0] if len(feats) == 1 else T.concat(feats, axis=1)
    return L.affine(ps, "head", z)


def mlm_loss(ps, paths, factors, tp0, tp1, y):
    return ce_loss(mlm_forward(ps, paths, factors, tp0, tp1), y)


@dataclass
class MlmData:
    factors: np.ndarray
    tp0: np.ndarray
    tp1: np.ndarray
    y: np.ndarray

    @classmethod
    def from_dataset(cls, d):
        pres = d.presence()
        if not np.all(d.factor_masks() == 1) or not np.all(pres == 1):
            raise ValueError(f"{d.split}: MLM needs completed records (impute first)")
        return cls(d.factor_values(), d.tp0(), d.tp1(), d.labels())

    def __len__(self):
        return len(self.y)


def train_mlm(train, val, adam_cfg=None, seed=0, epochs=None, batch_size=64, paths="both", cfg=None):
    """Adam on cross-entropy; parameters with the best validation AUC are kept
    (ties keep the earlier epoch)."""
    acfg = adam_cfg or AdamConfig(lr=1e-3)
    epochs = acfg.max_epochs if epochs is None else epochs
    if epochs > acfg.max_epochs:
        raise ValueError(f"epochs {epochs} exceeds max_epochs {acfg.max_epochs}")
    ps = init_mlm(seed, paths, train.factors.shape[1], cfg)
    order = make_rng("mlm-order", seed)
    n = len(train)
    best = (-np.inf, 0, ps.snapshot())
    model = MlmModel(ps, paths)
    for epoch in range(1, epochs + 1):
        perm = order.permutation(n)
        for b, s in enumerate(range(0, n, batch_size)):
            idx = np.sort(perm[s:s + batch_size])
            ps.zero_grad()
            loss = mlm_loss(ps, paths, train.factors[idx], train.tp0[idx], train.tp1[idx], train.y[idx])
            if not np.isfinite(loss.item()):
                raise TrainingError(f"MLM loss non-finite at epoch {epoch}, batch {b}")
            loss.backward()
            try:
                adam_step(ps, ps.grads(), acfg)
            except TrainingError as e:
                raise TrainingError(f"{e} at epoch {epoch}, batch {b}") from None
        score = auc(model.scores(val.factors, val.tp0, val.tp1), val.y)
        if score > best[0]:
            best = (score, epoch, ps.snapshot())
    ps.load(best[2])
    model.best_epoch, model.val_auc = best[1], best[0]
    return model


# ------------------------------------------------------------- probes

def fit_logistic(x, y, l2=1.0, iters=50):
    """Ridge logistic regression by Newton's method; returns (w, b)."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    xb = np.hstack([x, np.ones((len(x), 1))])
    w = np.zeros(xb.shape[1])
    reg = np.full(xb.shape[1], l2)
    reg[-1] = 0.0
    for _ in range(iters):
        p = expit(xb @ w)
        g = xb.T @ (p - y) + reg * w
        h = (xb * (p * (1 - p))[:, None]).T @ xb + np.diag(reg) + 1e-9 * np.eye(len(w))
        step = np.linalg.solve(h, g)
        w -= step
        if np.abs(step).max() < 1e-8:
            break
    return w[:-1], w[-1]


def probe_auc(x_fit, y_fit, x_eval, y_eval, l2=1e-2):
    """Validation AUC of a ridge-logistic probe fitted on ``x_fit``."""
    w, b = fit_logistic(x_fit, y_fit, l2)
    return auc(np.asarray(x_eval, np.float64) @ w + b, y_eval)


# ------------------------------------------------------------- metrics

@dataclass(frozen=True, eq=False)
class MetricsRow:
    image_imputer: str
    factor_imputer: str
    mechanism: str
    factor_rate: float
    tp1_rate: float
    seed: int
    auc: float
    p_value: float = float("nan")
    status: str = "ok"

    def __post_init__(self):
        if self.status == "ok" and not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc {self.auc} outside [0, 1]")

    def _key(self):
        # NaN compares equal to NaN here, so identical rows are equal rows
        return tuple("nan" if isinstance(v, float) and np.isnan(v) else v
                     for v in (getattr(self, f.name) for f in fields(self)))

    def __eq__(self, other):
        return isinstance(other, MetricsRow) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


METRIC_FIELDS = tuple(f.name for f in fields(MetricsRow))


def _fmt(v):
    if isinstance(v, float):
        return "nan" if np.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows, preamble=()):
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, k)) for k in METRIC_FIELDS])
    return buf.getvalue()


def rows_from_csv(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    r = csv.reader(lines)
    head = next(r)
    if tuple(head) != METRIC_FIELDS:
        raise ValueError(f"unexpected metrics header {head}")
    out = []
    for vals in r:
        d = dict(zip(head, vals))
        out.append(MetricsRow(d["image_imputer"], d["factor_imputer"], d["mechanism"],
                              float(d["factor_rate"]), float(d["tp1_rate"]), int(d["seed"]),
                              float(d["auc"]), float(d["p_value"]), d["status"]))
    return out
