"""Missingness mechanisms (MCAR / MAR / MNAR) for factors and whole-image drops.

Masks use 1 = observed, 0 = missing. MAR and MNAR entry-missing probabilities
are ``logistic(slope * driver + intercept [+ column_bias])`` with the intercept
found by bisection so the expected missing fraction matches ``rate``.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from mmimpute.data import FACTOR_GROUPS, N_FACTORS, LongitudinalImage, MultiModalRecord
from mmimpute.rng import derive_seed, make_rng

KINDS = ("MCAR", "MAR", "MNAR")


@dataclass(frozen=True)
class MechanismSpec:
    kind: str = "MCAR"
    rate: float = 0.3
    driver_index: int = None
    slope: float = 0.0
    seed: int = 0
    column_bias: tuple = None  # optional per-column additive logit (MNAR preset)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must lie in [0, 1], got {self.rate}")
        if self.kind == "MAR" and self.driver_index is None:
            raise ValueError("MAR requires driver_index")


def inhouse_mnar(rate=0.3, seed=0, slope=2.0, report_bias=1.5):
    """MNAR preset that masks report-derived factors (size, spiculation, lobe) more often."""
    bias = np.zeros(N_FACTORS)
    bias[list(FACTOR_GROUPS["report"])] = report_bias
    return MechanismSpec("MNAR", rate, slope=slope, seed=seed, column_bias=tuple(bias))


def mcar_mask(shape, rate, seed):
    """Each entry independently missing with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    u = make_rng("mcar", seed).random(shape)
    return (u >= rate).astype(np.uint8)


def calibrate_intercept(logits_wo_intercept, rate, tol=1e-3, max_iter=200):
    """Bisection for b with mean(logistic(z + b)) == rate (to ``tol`` in expected fraction)."""
    z = np.asarray(logits_wo_intercept, dtype=np.float64)
    if rate <= 0.0:
        return -np.inf
    if rate >= 1.0:
        return np.inf
    lo, hi = -50.0 - z.max(), 50.0 - z.min()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        frac = expit(z + mid).mean()
        if abs(frac - rate) < tol * 1e-3:
            break
        if frac < rate:
            lo = mid
        else:
            hi = mid
    return mid


def _logistic_mask(z, rate, seed, tag):
    b = calibrate_intercept(z, rate)
    p = expit(z + b) if np.isfinite(b) else np.full(z.shape, float(b > 0))
    u = make_rng(tag, seed).random(z.shape)
    return (u >= p).astype(np.uint8)


def mar_mask(values, spec):
    """Mask for a (n, F) factor matrix; missingness driven by an always-observed column."""
    x = np.atleast_2d(np.asarray(values, dtype=np.float64))
    n, f = x.shape
    if spec.driver_index is None or not 0 <= spec.driver_index < f:
        raise ValueError(f"driver_index {spec.driver_index} out of range for {f} factors")
    others = [j for j in range(f) if j != spec.driver_index]
    z = np.repeat(spec.slope * x[:, [spec.driver_index]], len(others), axis=1)
    if spec.column_bias is not None:
        z = z + np.asarray(spec.column_bias, dtype=np.float64)[others]
    mask = np.ones((n, f), dtype=np.uint8)
    mask[:, others] = _logistic_mask(z, spec.rate, spec.seed, "mar")
    return mask if np.ndim(values) == 2 else mask[0]


def mnar_mask(values, spec):
    """Mask whose entry-missing probability depends on the entry's own (unobserved) value."""
    x = np.atleast_2d(np.asarray(values, dtype=np.float64))
    z = spec.slope * x
    if spec.column_bias is not None:
        z = z + np.asarray(spec.column_bias, dtype=np.float64)
    mask = _logistic_mask(z, spec.rate, spec.seed, "mnar")
    return mask if np.ndim(values) == 2 else mask[0]


def factor_mask(values, spec):
    """Dispatch on ``spec.kind`` for a (n, F) factor matrix."""
    values = np.asarray(values)
    if spec.kind == "MCAR":
        return mcar_mask(values.shape, spec.rate, spec.seed)
    if spec.kind == "MAR":
        return mar_mask(values, spec)
    return mnar_mask(values, spec)


def drop_tp1(rate, seed, record):
    """With probability ``rate`` mark the record's TP1 image missing (pixels zeroed)."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    if make_rng("tp1", seed, record.id).random() >= rate:
        return record
    img = record.images
    return MultiModalRecord(record.id, record.factors,
                            LongitudinalImage(img.tp0, np.zeros_like(img.tp1), img.tp0_present, False),
                            record.label)


def sample_fake_mask(spec, shape, seed, pool=None):
    """Mask for the adversarial fake branch, drawn like the training corruption.

    MCAR draws fresh masks. MAR/MNAR masks depend on data values, so rows are
    resampled with replacement from ``pool`` (the training masks).
    """
    if spec.kind == "MCAR":
        return mcar_mask(shape, spec.rate, seed)
    if pool is None or len(pool) == 0:
        raise ValueError(f"{spec.kind} fake masks need the pool of training masks")
    idx = make_rng("fake-mask", seed).integers(0, len(pool), size=shape[0])
    return np.asarray(pool)[idx].astype(np.uint8)


def corrupt_dataset(d, spec, tp1_rate=0.0, seed=0, tp0_rate=0.0):
    """Apply factor masking (entries zero-filled) and whole-image drops to a split."""
    values = d.factor_values()
    if spec is None or spec.rate == 0.0:
        mask = np.ones_like(d.factor_masks())
    else:
        spec_here = MechanismSpec(spec.kind, spec.rate, spec.driver_index, spec.slope,
                                  hash_seed(spec.seed, seed, d.split), spec.column_bias)
        mask = factor_mask(values, spec_here)
    mask = mask & d.factor_masks()
    fv = np.where(mask.astype(bool), values, 0.0).astype(np.float32)
    pres = d.presence().copy()
    t0, t1 = d.tp0().copy(), d.tp1().copy()
    for i, r in enumerate(d.records):
        if pres[i, 1] and drop_tp1(tp1_rate, seed, r) is not r:
            pres[i, 1] = 0
            t1[i] = 0.0
        if pres[i, 0] and tp0_rate > 0 and pres[i, 1] and make_rng("tp0", seed, r.id).random() < tp0_rate:
            pres[i, 0] = 0
            t0[i] = 0.0
    return d.with_arrays(factor_values=fv, factor_masks=mask.astype(np.uint8), tp0=t0, tp1=t1, presence=pres)


def hash_seed(*parts):
    return derive_seed(*parts) % (2 ** 63)


__all__ = [
    "KINDS", "MechanismSpec", "calibrate_intercept", "corrupt_dataset", "drop_tp1",
    "factor_mask", "inhouse_mnar", "mar_mask", "mcar_mask", "mnar_mask", "sample_fake_mask",
]
