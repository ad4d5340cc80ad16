"""Synthetic paired-modality cohort with planted cross-modal signal.

Generative story for subject ``index`` (all draws from ``make_rng(seed, "record", index)``):

* ``y ~ Bernoulli(class_balance)``
* Signal factors, with ``s = signal_strength`` and ``e ~ N(0, 1)`` per factor::

      nodule_size = 6.0 + 2.0*s*y + 2.5*noise_scale*e     (mm)
      spiculation = 0.30 + 0.12*s*y + 0.20*noise_scale*e  (score)
      age         = 62 + 4.0*s*y + 6*noise_scale*e        (years)
      pack_year   = 45 + 10.0*s*y + 20*noise_scale*e

* Nuisance factors are drawn independently of ``y`` from fixed marginals
  (categorical ones as ordinal codes, see ``_nuisance``).
* Images: one smooth seeded background shared by both timepoints plus a
  centred blob. With size and spiculation mapped to the unit interval by the
  fixed rendering ranges ``SIZE_RANGE``/``SPIC_RANGE``::

      r_tp0 = R_MIN + (R_MAX - R_MIN) * size_unit
      r_tp1 = r_tp0 + GROWTH * s * y
      boundary(theta) = r * (1 + SPIC_AMP * spic_unit * sin(LOBES*theta + phase))
      blob(d) = CONTRAST * sigmoid((boundary - d) / SOFTNESS)

  and per-timepoint pixel noise ``N(0, (PIXEL_NOISE*noise_scale)^2)``.

These constants are choices made for this synthetic benchmark.
"""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import zoom

from mmimpute.data import (CENTER, IMAGE_SHAPE, N_FACTORS, SIZE, SPICULATION, Dataset,
                           FactorVector, LongitudinalImage, MultiModalRecord, NormStats,
                           normalize_factors)
from mmimpute.rng import derive_seed, make_rng

R_MIN, R_MAX = 2.0, 6.0
GROWTH = 0.4
SPIC_AMP = 0.35
LOBES = 7
SOFTNESS = 0.6
CONTRAST = 0.55
BG_LEVEL, BG_AMP = 0.20, 0.12
PIXEL_NOISE = 0.10
SIZE_RANGE = (2.0, 16.0)
SPIC_RANGE = (0.0, 1.0)

AGE, PACK_YEAR = 0, 7


@dataclass(frozen=True)
class GeneratorConfig:
    n: int = 1000
    class_balance: float = 0.5
    noise_scale: float = 1.0
    signal_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        vals = (self.class_balance, self.noise_scale, self.signal_strength)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("generator settings must be finite")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 < self.class_balance < 1:
            raise ValueError("class_balance must lie in (0, 1)")
        if self.noise_scale < 0 or self.signal_strength < 0:
            raise ValueError("noise_scale and signal_strength must be >= 0")


def size_formula(y, signal_strength, noise_scale=0.0, e=0.0):
    return 6.0 + 2.0 * signal_strength * y + 2.5 * noise_scale * e


def _nuisance(rng):
    out = np.empty(N_FACTORS)
    out[1] = rng.integers(0, 2)                  # sex
    out[2] = rng.integers(0, 7)                  # education (ordinal)
    out[3] = rng.normal(27.5, 5.0)               # bmi
    out[4] = rng.integers(0, 5)                  # race (ordinal code)
    out[5] = max(0.0, rng.normal(5.0, 6.0))      # quit_time (years)
    out[6] = rng.integers(0, 2)                  # smoke_status
    out[8] = float(rng.random() < 0.2)           # copd
    out[9] = float(rng.random() < 0.1)           # personal_cancer
    out[10] = float(rng.random() < 0.2)          # family_lung_cancer
    out[13] = float(rng.random() < 0.55)         # upper_lobe
    return out


def _unit(v, lo_hi):
    lo, hi = lo_hi
    return float(np.clip((v - lo) / (hi - lo), 0.0, 1.0))


def generate_record(cfg, index):
    """Record ``index`` with raw-unit factors (normalization happens in make_dataset)."""
    if not 0 <= index < cfg.n:
        raise ValueError(f"index {index} outside [0, {cfg.n})")
    rng = make_rng(cfg.seed, "record", index)
    y = int(rng.random() < cfg.class_balance)
    s, ns = cfg.signal_strength, cfg.noise_scale
    e = rng.standard_normal(4)
    raw = _nuisance(rng)
    raw[SIZE] = size_formula(y, s, ns, e[0])
    raw[SPICULATION] = 0.30 + 0.12 * s * y + 0.20 * ns * e[1]
    raw[AGE] = 62.0 + 4.0 * s * y + 6.0 * ns * e[2]
    raw[PACK_YEAR] = 45.0 + 10.0 * s * y + 20.0 * ns * e[3]
    bg_seed = derive_seed(cfg.seed, "background", index)
    units = rendering_units(raw)
    tp0 = render_nodule(units, y, bg_seed, "tp0", signal_strength=s, noise_scale=ns)
    tp1 = render_nodule(units, y, bg_seed, "tp1", signal_strength=s, noise_scale=ns)
    return MultiModalRecord(
        id=f"r{cfg.seed}-{index:06d}",
        factors=FactorVector(raw.astype(np.float32), np.ones(N_FACTORS, np.uint8)),
        images=LongitudinalImage(tp0, tp1),
        label=y,
    )


def rendering_units(raw):
    """Factor vector normalized by the fixed rendering ranges (size, spiculation only)."""
    out = np.zeros(N_FACTORS, dtype=np.float32)
    out[SIZE] = _unit(raw[SIZE], SIZE_RANGE)
    out[SPICULATION] = _unit(raw[SPICULATION], SPIC_RANGE)
    return FactorVector(out, np.ones(N_FACTORS, np.uint8))


def blob_radius(size_unit, y, timepoint, signal_strength=1.0):
    r = R_MIN + (R_MAX - R_MIN) * size_unit
    if timepoint == "tp1":
        r += GROWTH * signal_strength * y
    return r


def background(background_seed):
    """Smooth multi-octave value noise in roughly [BG_LEVEL - BG_AMP, BG_LEVEL + BG_AMP]."""
    rng = make_rng("bg", background_seed)
    h, w = IMAGE_SHAPE[1:]
    img = np.zeros((h, w))
    amp = 1.0
    for cells in (4, 8, 16):
        grid = rng.standard_normal((cells + 1, cells + 1))
        up = zoom(grid, (h + h // cells) / (cells + 1), order=3)[:h, :w]
        img += amp * up
        amp *= 0.5
    img /= 1.75
    return BG_LEVEL + BG_AMP * np.tanh(img)


def render_nodule(factors, y, background_seed, timepoint, signal_strength=1.0, noise_scale=0.0):
    """1x32x32 patch: shared background plus a centred, possibly spiculated blob."""
    if timepoint not in ("tp0", "tp1"):
        raise ValueError(f"timepoint must be 'tp0' or 'tp1', got {timepoint!r}")
    size_u = float(factors.values[SIZE])
    spic_u = float(factors.values[SPICULATION])
    h, w = IMAGE_SHAPE[1:]
    yy, xx = np.mgrid[0:h, 0:w] - (h - 1) / 2.0
    dist = np.hypot(yy, xx)
    theta = np.arctan2(yy, xx)
    phase = make_rng("phase", background_seed).uniform(0, 2 * np.pi)
    r = blob_radius(size_u, y, timepoint, signal_strength)
    boundary = r * (1.0 + SPIC_AMP * spic_u * np.sin(LOBES * theta + phase))
    blob = CONTRAST / (1.0 + np.exp(-(boundary - dist) / SOFTNESS))
    img = background(background_seed) + blob
    if noise_scale > 0:
        img = img + make_rng("pixel", background_seed, timepoint).normal(0, PIXEL_NOISE * noise_scale, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32).reshape(IMAGE_SHAPE)


def split_sizes(n):
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    return n_train, n_val, n - n_train - n_val


def make_dataset(cfg):
    """Generate, split 60/20/20 and normalize with train-only min/max."""
    if cfg.n < 10:
        raise ValueError(f"n={cfg.n} too small to populate train/validation/test (need >= 10)")
    records = [generate_record(cfg, i) for i in range(cfg.n)]
    order = make_rng(cfg.seed, "split").permutation(cfg.n)
    n_train, n_val, _ = split_sizes(cfg.n)
    parts = {
        "train": sorted(order[:n_train]),
        "validation": sorted(order[n_train:n_train + n_val]),
        "test": sorted(order[n_train + n_val:]),
    }
    raw_train = np.array([records[i].factors.values for i in parts["train"]], dtype=np.float64)
    stats = NormStats.from_raw(raw_train)
    out = []
    for split in ("train", "validation", "test"):
        recs = []
        for i in parts[split]:
            r = records[i]
            fv = normalize_factors(r.factors.values, stats)
            recs.append(MultiModalRecord(r.id, fv, r.images, r.label))
        out.append(Dataset(recs, split, stats))
    return tuple(out)


def central_intensity(images):
    """Mean pixel value of the central window per image (N,1,32,32) -> (N,)."""
    images = np.asarray(images)
    return images[..., CENTER, CENTER].reshape(images.shape[0], -1).mean(axis=1)
