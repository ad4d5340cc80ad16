"""Non-adversarial imputers: column means, LOCF for image pairs, soft-impute."""
from dataclasses import dataclass

import numpy as np

from mmimpute.data import (IMPUTED, OBSERVED, FactorVector, ImputationResult, LongitudinalImage,
                           MultiModalRecord, factor_provenance, merge_observed)


def column_means(values, masks):
    """Mean of observed entries per column; raises if a column is never observed."""
    values = np.asarray(values, dtype=np.float64)
    masks = np.asarray(masks).astype(bool)
    counts = masks.sum(axis=0)
    if np.any(counts == 0):
        bad = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"factor column(s) {bad} never observed in train; no mean exists")
    return (np.where(masks, values, 0.0).sum(axis=0) / counts).astype(np.float32)


def mean_impute(train_means, record):
    fv = record.factors
    filled = merge_observed(fv.values, np.asarray(train_means, dtype=np.float32), fv.mask)
    rec = MultiModalRecord(record.id, FactorVector(filled, np.ones_like(fv.mask)), record.images, record.label)
    return ImputationResult(rec, {"factors": factor_provenance(fv.mask)})


def mean_impute_matrix(train_means, values, masks):
    return merge_observed(values, np.broadcast_to(np.asarray(train_means, np.float32), values.shape), masks)


def locf_images(record):
    """Carry the present timepoint into the missing one (either direction)."""
    img = record.images
    if not img.tp0_present and not img.tp1_present:
        raise ValueError(f"record {record.id}: both timepoints missing, nothing to carry")
    prov = {"tp0": OBSERVED, "tp1": OBSERVED}
    tp0, tp1 = img.tp0, img.tp1
    if not img.tp1_present:
        tp1, prov["tp1"] = img.tp0.copy(), IMPUTED
    elif not img.tp0_present:
        tp0, prov["tp0"] = img.tp1.copy(), IMPUTED
    rec = MultiModalRecord(record.id, record.factors, LongitudinalImage(tp0, tp1, True, True), record.label)
    return ImputationResult(rec, prov)


def locf_arrays(tp0, tp1, presence):
    """Vectorised LOCF over stacked images; returns (tp0, tp1) copies."""
    p0 = presence[:, 0].astype(bool)
    p1 = presence[:, 1].astype(bool)
    if np.any(~p0 & ~p1):
        raise ValueError("LOCF: some records have both timepoints missing")
    new1 = np.where(p1[:, None, None, None], tp1, tp0)
    new0 = np.where(p0[:, None, None, None], tp0, tp1)
    return new0.astype(np.float32), new1.astype(np.float32)


# ---------------------------------------------------------------- soft-impute

@dataclass(frozen=True)
class SoftImputeConfig:
    lam: float = 0.1
    tol: float = 1e-5
    max_iter: int = 500

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def svt(x, lam):
    """Singular value soft-thresholding ``U diag(max(s - lam, 0)) V^T``."""
    x = np.asarray(x, dtype=np.float64)
    if lam == 0:
        return x.copy()
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    s = np.maximum(s - lam, 0.0)
    keep = s > 0
    return (u[:, keep] * s[keep]) @ vt[keep]


def nuclear_norm(x):
    return float(np.linalg.svd(np.asarray(x, dtype=np.float64), compute_uv=False).sum())


def soft_impute_objective(x, m_obs, mask, lam):
    r = np.where(mask, x - m_obs, 0.0)
    return 0.5 * float((r * r).sum()) + lam * nuclear_norm(x)


def soft_impute(m_obs, mask, cfg, x0=None, history=None):
    """Iterate ``X <- svt(mask*M + (1-mask)*X, lam)`` until the relative
    Frobenius change drops below ``cfg.tol`` or ``cfg.max_iter`` is hit.

    ``history``, if a list, receives the objective after every iteration.
    """
    m_obs = np.asarray(m_obs, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if m_obs.shape != mask.shape:
        raise ValueError(f"matrix {m_obs.shape} and mask {mask.shape} differ in shape")
    if not mask.any():
        raise ValueError("soft_impute: no observed entries")
    x = np.zeros_like(m_obs) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    for _ in range(cfg.max_iter):
        x_new = svt(np.where(mask, m_obs, x), cfg.lam)
        if history is not None:
            history.append(soft_impute_objective(x_new, m_obs, mask, cfg.lam))
        denom = max(float((x * x).sum()), 1e-300)
        change = float(((x_new - x) ** 2).sum()) / denom
        x = x_new
        if change < cfg.tol:
            break
    return x


def soft_impute_path(m_obs, mask, lams, tol=1e-5, max_iter=500):
    """Warm-started solutions for a decreasing lambda sequence; returns {lam: X}."""
    out, x = {}, None
    for lam in sorted(lams, reverse=True):
        x = soft_impute(m_obs, mask, SoftImputeConfig(lam, tol, max_iter), x0=x)
        out[lam] = x
    return out


def soft_impute_fill(values, masks, cfg, x0=None):
    """Complete a factor matrix: observed entries kept exactly, missing from soft-impute."""
    x = soft_impute(values, masks, cfg, x0=x0)
    return merge_observed(np.asarray(values, np.float32), x.astype(np.float32), masks)
