"""Two-modality records, masks, datasets and the observed-entry merge rule.

A record pairs a 14-entry risk-factor vector (with a per-entry observation
mask) with a longitudinal pair of 1x32x32 nodule patches (with per-timepoint
presence flags) and a binary label. Everything is an immutable value: arrays
are stored read-only and operations return new objects.
"""
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

N_FACTORS = 14
FACTOR_NAMES = (
    "age", "sex", "education", "bmi", "race", "quit_time", "smoke_status",
    "pack_year", "copd", "personal_cancer", "family_lung_cancer",
    "nodule_size", "spiculation", "upper_lobe",
)
# where each factor is captured in the screening workflow
FACTOR_GROUPS = {
    "emr": (0, 1),
    "sdm": (2, 3, 4, 5, 6, 7, 8, 9, 10),
    "report": (11, 12, 13),
}
SIZE, SPICULATION = 11, 12

IMAGE_SHAPE = (1, 32, 32)
CENTER = slice(8, 24)  # central 16x16 window

OBSERVED, IMPUTED, GENERATED = "observed", "imputed", "generated"
SPLITS = ("train", "validation", "test")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def center_mask(shape=IMAGE_SHAPE):
    """Observation mask with the central window zeroed (1 elsewhere)."""
    m = np.ones(shape, dtype=np.float32)
    m[..., CENTER, CENTER] = 0.0
    return m


def merge_observed(x, x_hat, m):
    """``m*x + (1-m)*x_hat`` taken elementwise, exact on observed entries."""
    x, x_hat, m = np.asarray(x), np.asarray(x_hat), np.asarray(m)
    if not (x.shape == x_hat.shape == m.shape):
        raise ValueError(f"merge_observed: shape mismatch x{x.shape} x_hat{x_hat.shape} m{m.shape}")
    return np.where(m.astype(bool), x, x_hat.astype(x.dtype, copy=False))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        for k in ("mean", "min", "max"):
            object.__setattr__(self, k, _frozen(getattr(self, k), np.float64))
        if not all(np.all(np.isfinite(getattr(self, k))) for k in ("mean", "min", "max")):
            raise ValueError("normalization stats must be finite")

    @classmethod
    def from_raw(cls, raw):
        raw = np.asarray(raw, dtype=np.float64)
        return cls(raw.mean(axis=0), raw.min(axis=0), raw.max(axis=0))

    def __eq__(self, other):
        return isinstance(other, NormStats) and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("mean", "min", "max"))


@dataclass(frozen=True, eq=False)
class FactorVector:
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, np.float32))
        object.__setattr__(self, "mask", _frozen(self.mask, np.uint8))
        if self.values.shape != self.mask.shape or self.values.ndim != 1:
            raise ValueError(f"factor values {self.values.shape} and mask {self.mask.shape} must be equal 1-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("factor values must be finite")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("factor mask entries must be 0 or 1")

    def __eq__(self, other):
        return (isinstance(other, FactorVector) and np.array_equal(self.values, other.values)
                and np.array_equal(self.mask, other.mask))


def _check_patch(p, name):
    if p.shape != IMAGE_SHAPE:
        raise ValueError(f"{name}: expected shape {IMAGE_SHAPE}, got {p.shape}")
    if not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 1:
        raise ValueError(f"{name}: pixels must be finite and in [0, 1]")


@dataclass(frozen=True, eq=False)
class LongitudinalImage:
    tp0: np.ndarray
    tp1: np.ndarray
    tp0_present: bool = True
    tp1_present: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tp0", _frozen(self.tp0, np.float32))
        object.__setattr__(self, "tp1", _frozen(self.tp1, np.float32))
        object.__setattr__(self, "tp0_present", bool(self.tp0_present))
        object.__setattr__(self, "tp1_present", bool(self.tp1_present))
        _check_patch(self.tp0, "tp0")
        _check_patch(self.tp1, "tp1")

    def latest(self):
        """Most recent present timepoint, or None."""
        if self.tp1_present:
            return self.tp1
        if self.tp0_present:
            return self.tp0
        return None

    def __eq__(self, other):
        return (isinstance(other, LongitudinalImage) and self.tp0_present == other.tp0_present
                and self.tp1_present == other.tp1_present
                and np.array_equal(self.tp0, other.tp0) and np.array_equal(self.tp1, other.tp1))


@dataclass(frozen=True)
class MultiModalRecord:
    id: str
    factors: FactorVector
    images: LongitudinalImage
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not self.id or any(c.isspace() for c in self.id):
            raise ValueError(f"record id must be non-empty without whitespace: {self.id!r}")


@dataclass(frozen=True)
class ImputationResult:
    """Completed record; ``provenance`` maps 'factors' to a per-entry tag
    array and 'tp0'/'tp1' to a single tag."""
    record: MultiModalRecord
    provenance: dict = field(default_factory=dict)


def factor_provenance(mask, tag=IMPUTED):
    return np.where(np.asarray(mask).astype(bool), OBSERVED, tag)


def normalize_factors(raw, stats, mask=None):
    """Min-max scale ``raw`` with train stats; constant factors map to 0.5."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("normalize_factors: non-finite raw value")
    span = stats.max - stats.min
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (raw - stats.min) / safe, 0.5)
    out = np.clip(out, 0.0, 1.0)
    if mask is None:
        mask = np.ones(raw.shape, dtype=np.uint8)
    return FactorVector(out.astype(np.float32), mask)


class Dataset:
    """An ordered, immutable collection of records from one split."""

    def __init__(self, records, split, normalization_stats):
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        self.records = tuple(records)
        self.split = split
        self.normalization_stats = normalization_stats
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("record ids must be unique within a dataset")
        self._cache = {}

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.split == other.split
                and self.normalization_stats == other.normalization_stats
                and self.records == other.records)

    def _stack(self, key, fn, dtype, shape):
        if key not in self._cache:
            a = np.array([fn(r) for r in self.records], dtype=dtype).reshape((len(self),) + shape)
            a.setflags(write=False)
            self._cache[key] = a
        return self._cache[key]

    @property
    def n_factors(self):
        return self.records[0].factors.values.shape[0] if self.records else N_FACTORS

    def factor_values(self):
        return self._stack("fv", lambda r: r.factors.values, np.float32, (self.n_factors,))

    def factor_masks(self):
        return self._stack("fm", lambda r: r.factors.mask, np.uint8, (self.n_factors,))

    def tp0(self):
        return self._stack("tp0", lambda r: r.images.tp0, np.float32, IMAGE_SHAPE)

    def tp1(self):
        return self._stack("tp1", lambda r: r.images.tp1, np.float32, IMAGE_SHAPE)

    def presence(self):
        return self._stack("pres", lambda r: (r.images.tp0_present, r.images.tp1_present), np.uint8, (2,))

    def labels(self):
        return self._stack("y", lambda r: r.label, np.int64, ())

    def ids(self):
        return [r.id for r in self.records]

    def latest_images(self):
        """Per record, tp1 if present else tp0 (zeros if neither)."""
        pres = self.presence()
        return np.where(pres[:, 1, None, None, None].astype(bool), self.tp1(),
                        np.where(pres[:, 0, None, None, None].astype(bool), self.tp0(), 0.0)).astype(np.float32)

    def with_arrays(self, factor_values=None, factor_masks=None, tp0=None, tp1=None, presence=None):
        """New dataset with some stacked arrays replaced (record order kept)."""
        fv = self.factor_values() if factor_values is None else factor_values
        fm = self.factor_masks() if factor_masks is None else factor_masks
        t0 = self.tp0() if tp0 is None else tp0
        t1 = self.tp1() if tp1 is None else tp1
        pr = self.presence() if presence is None else presence
        recs = []
        for i, r in enumerate(self.records):
            recs.append(MultiModalRecord(
                r.id, FactorVector(fv[i], fm[i]),
                LongitudinalImage(t0[i], t1[i], pr[i, 0], pr[i, 1]), r.label))
        return Dataset(recs, self.split, self.normalization_stats)

    def replace_records(self, records):
        return Dataset(records, self.split, self.normalization_stats)


# ---------------------------------------------------------------- file format
#
# <dir>/manifest.txt    text, one key per line, then one line per record:
#                       "record <id> <label> <tp0_present> <tp1_present> <factor-mask bits> <offset>"
# <dir>/payload.f32     little-endian float32; per record: factors, tp0, tp1
#
MAGIC = "MMDATASET v1"
PIXELS = int(np.prod(IMAGE_SHAPE))


def _hexs(a):
    return ",".join(float(v).hex() for v in a)


def _unhex(s):
    return np.array([float.fromhex(v) for v in s.split(",")], dtype=np.float64) if s else np.zeros(0)


def save_dataset(d, path):
    os.makedirs(path, exist_ok=True)
    f = d.n_factors
    stride = f + 2 * PIXELS
    parts, lines = [], []
    for i, r in enumerate(d.records):
        parts.append(np.concatenate([r.factors.values, r.images.tp0.ravel(), r.images.tp1.ravel()]))
        bits = "".join(str(int(b)) for b in r.factors.mask)
        lines.append(f"record {r.id} {r.label} {int(r.images.tp0_present)} "
                     f"{int(r.images.tp1_present)} {bits} {i * stride}")
    payload = (np.concatenate(parts) if parts else np.zeros(0)).astype("<f4").tobytes()
    st = d.normalization_stats
    header = [
        MAGIC,
        f"split {d.split}",
        f"n_records {len(d)}",
        f"n_factors {f}",
        "image_shape " + "x".join(map(str, IMAGE_SHAPE)),
        f"stats.mean {_hexs(st.mean)}",
        f"stats.min {_hexs(st.min)}",
        f"stats.max {_hexs(st.max)}",
        f"payload_bytes {len(payload)}",
        f"payload_sha256 {hashlib.sha256(payload).hexdigest()}",
    ]
    with open(os.path.join(path, "manifest.txt"), "w", newline="\n") as fh:
        fh.write("\n".join(header + lines) + "\n")
    with open(os.path.join(path, "payload.f32"), "wb") as fh:
        fh.write(payload)


def load_dataset(path):
    with open(os.path.join(path, "manifest.txt")) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{path}/manifest.txt line 1: expected {MAGIC!r}")
    keys = {}
    expected = ["split", "n_records", "n_factors", "image_shape", "stats.mean", "stats.min",
                "stats.max", "payload_bytes", "payload_sha256"]
    for lineno, key in enumerate(expected, start=2):
        if lineno > len(lines):
            raise ValueError(f"{path}/manifest.txt line {lineno}: missing header {key!r}")
        k, _, v = lines[lineno - 1].partition(" ")
        if k != key:
            raise ValueError(f"{path}/manifest.txt line {lineno}: expected {key!r}, got {k!r}")
        keys[k] = v
    try:
        n, f = int(keys["n_records"]), int(keys["n_factors"])
        nbytes = int(keys["payload_bytes"])
        stats = NormStats(_unhex(keys["stats.mean"]), _unhex(keys["stats.min"]), _unhex(keys["stats.max"]))
    except ValueError as exc:
        raise ValueError(f"{path}/manifest.txt: corrupt header ({exc})") from None
    if keys["image_shape"] != "x".join(map(str, IMAGE_SHAPE)):
        raise ValueError(f"{path}/manifest.txt line 5: unsupported image shape {keys['image_shape']}")
    with open(os.path.join(path, "payload.f32"), "rb") as fh:
        raw = fh.read()
    if len(raw) != nbytes:
        raise ValueError(f"{path}/payload.f32: truncated or oversized payload; "
                         f"expected {nbytes} bytes, found {len(raw)} (stops at byte {len(raw)})")
    if hashlib.sha256(raw).hexdigest() != keys["payload_sha256"]:
        raise ValueError(f"{path}/payload.f32: checksum mismatch")
    payload = np.frombuffer(raw, dtype="<f4")
    stride = f + 2 * PIXELS
    body = lines[len(expected) + 1:]
    if len(body) != n:
        raise ValueError(f"{path}/manifest.txt: header says {n} records, found {len(body)} record lines")
    recs = []
    for lineno, line in enumerate(body, start=len(expected) + 2):
        tok = line.split()
        if len(tok) != 7 or tok[0] != "record" or len(tok[5]) != f:
            raise ValueError(f"{path}/manifest.txt line {lineno}: malformed record line")
        rid, label, p0, p1, bits, off = tok[1], int(tok[2]), int(tok[3]), int(tok[4]), tok[5], int(tok[6])
        if off + stride > payload.size:
            raise ValueError(f"{path}/payload.f32: record {rid!r} (line {lineno}) extends past "
                             f"byte {payload.size * 4}")
        chunk = payload[off:off + stride]
        fv = FactorVector(chunk[:f], np.array([int(b) for b in bits], dtype=np.uint8))
        img = LongitudinalImage(chunk[f:f + PIXELS].reshape(IMAGE_SHAPE),
                                chunk[f + PIXELS:].reshape(IMAGE_SHAPE), p0, p1)
        recs.append(MultiModalRecord(rid, fv, img, label))
    return Dataset(recs, keys["split"], stats)


def dataset_digest(d):
    """SHA-256 over the canonical serialization (used for provenance)."""
    h = hashlib.sha256()
    h.update(d.split.encode())
    for r in d.records:
        h.update(r.id.encode())
        h.update(bytes([r.label, r.images.tp0_present, r.images.tp1_present]))
        h.update(r.factors.values.tobytes())
        h.update(r.factors.mask.tobytes())
        h.update(r.images.tp0.tobytes())
        h.update(r.images.tp1.tobytes())
    return h.hexdigest()


__all__ = [
    "CENTER", "Dataset", "FACTOR_GROUPS", "FACTOR_NAMES", "FactorVector", "GENERATED", "IMAGE_SHAPE",
    "IMPUTED", "ImputationResult", "LongitudinalImage", "MultiModalRecord", "N_FACTORS", "NormStats",
    "OBSERVED", "SIZE", "SPICULATION", "center_mask", "dataset_digest", "factor_provenance",
    "load_dataset", "merge_observed", "normalize_factors", "save_dataset",
]
