"""PBiGAN and conditional PBiGAN: bundles, objectives and imputation.

Two target modalities are supported:

* ``factors``: A is the partially observed factor vector, B is the latest
  available image. Imputation keeps observed entries and fills the rest from
  the decoder output (``x~ = m*x + (1-m)*g(z)``).
* ``image``: A is the TP1 patch, which is either fully present or fully
  missing. The encoder of A sees a background image with its centre masked
  (TP1 during training, TP0 at imputation time); the imputed TP1 is the
  whole decoder output ``g([q_A(background) ; q_B(factors)], skips)``. The
  ``cpbigan_sharp`` mode feeds the background unmasked.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from mmimpute.data import (GENERATED, IMAGE_SHAPE, OBSERVED, FactorVector, ImputationResult,
                           LongitudinalImage, MultiModalRecord, center_mask, factor_provenance,
                           merge_observed)
from mmimpute.diff import tensor as T
from mmimpute.diff.losses import ce_loss, log_clamped, log_prob_logits, mse_masked
from mmimpute.diff.params import load_tensors, merge, save_tensors
from mmimpute.gan import nets

log = logging.getLogger(__name__)

MODES = ("pbigan", "cpbigan", "cpbigan_sharp")
MODALITIES = ("factors", "image")
G_LOSSES = ("minimax", "nonsaturating")


@dataclass
class AdversarialBundle:
    modality: str
    mode: str
    encoder_A: object
    decoder_A: object
    discriminator: object
    encoder_B: object = None
    classifier: object = None
    lambda_rec: float = 1.0
    lambda_ce: float = 1.0
    d_z: int = nets.DEFAULTS["d_z"]
    rec_drop: float = 0.0
    g_loss: str = "minimax"
    adv_through_B: bool = False
    seed: int = 0
    n_factors: int = 14
    meta: dict = field(default_factory=dict)

    @property
    def conditional(self):
        return self.encoder_B is not None

    @property
    def d_zB(self):
        return self.encoder_B.d_z if self.encoder_B is not None else 0

    def generator_params(self):
        parts = [self.encoder_A.params, self.decoder_A.params]
        pre = ["encoder_A.", "decoder_A."]
        if self.encoder_B is not None:
            parts.append(self.encoder_B.params)
            pre.append("encoder_B.")
        return merge(*parts, prefixes=pre)

    def all_params(self):
        parts, pre = [], []
        for name in ("encoder_A", "encoder_B", "decoder_A", "discriminator", "classifier"):
            net = getattr(self, name)
            if net is not None:
                parts.append(net.params)
                pre.append(name + ".")
        return merge(*parts, prefixes=pre)

    def background_mask(self):
        if self.mode == "cpbigan_sharp":
            return np.ones(IMAGE_SHAPE, np.float32)
        return center_mask()


def build_bundle(modality, mode, seed=0, n_factors=14, d_z=None, lambda_rec=1.0, lambda_ce=1.0,
                 condition=True, rec_drop=0.0, g_loss="minimax", adv_through_B=False):
    """Construct a bundle; ``condition=False`` ablates encoder_B in cpbigan modes.

    The classifier exists only for conditional modes with ``lambda_ce > 0``.
    ``rec_drop`` (factors only) hides that share of observed entries from the
    encoder in the reconstruction pass; the reconstruction target is still
    every observed entry, so the decoder learns to fill entries it cannot see.
    """
    if not 0.0 <= rec_drop < 1.0:
        raise ValueError("rec_drop must lie in [0, 1)")
    if g_loss not in G_LOSSES:
        raise ValueError(f"g_loss must be one of {G_LOSSES}")
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "cpbigan_sharp" and modality != "image":
        raise ValueError("cpbigan_sharp only applies to image imputation")
    d_z = d_z or nets.DEFAULTS["d_z"]
    use_b = mode != "pbigan" and condition
    use_c = mode != "pbigan" and lambda_ce > 0
    d_tot = d_z * (2 if use_b else 1)
    if modality == "factors":
        enc_a = nets.FactorEncoder("factor_enc_A", seed, n_factors, d_z)
        enc_b = nets.ImageEncoder("image_enc_B", seed, d_z, with_mask=False) if use_b else None
        dec = nets.FactorDecoder("factor_dec_A", seed, d_tot, n_factors)
        disc = nets.FactorDiscriminator("factor_disc", seed, n_factors, d_tot)
        clf = nets.FactorClassifier("factor_clf", seed, n_factors) if use_c else None
    else:
        enc_a = nets.ImageEncoder("image_enc_A", seed, d_z, with_mask=True)
        enc_b = nets.FactorEncoder("factor_enc_B", seed, n_factors, d_z, with_mask=False) if use_b else None
        dec = nets.ImageDecoder("image_dec_A", seed, d_tot, skips=True)
        disc = nets.ImageDiscriminator("image_disc", seed, d_tot)
        clf = nets.ImageClassifier("image_clf", seed) if use_c else None
    return AdversarialBundle(modality, mode, enc_a, dec, disc, enc_b, clf, lambda_rec,
                             lambda_ce if use_c else 0.0, d_z, rec_drop if modality == "factors" else 0.0,
                             g_loss, adv_through_B, seed, n_factors)


# --------------------------------------------------------------- objectives

def d_objective_from_probs(d_real, d_fake):
    """mean log D(real) + mean log(1 - D(fake)) with the probability clamp."""
    return T.mean(log_clamped(d_real)) + T.mean(log_clamped(1.0 - T.as_tensor(d_fake)))


def d_objective_from_logits(l_real, l_fake):
    """Same objective evaluated from discriminator logits (used for training)."""
    return T.mean(log_prob_logits(l_real, 1)) + T.mean(log_prob_logits(l_fake, 0))


def encode_incomplete(q_a, x, m):
    """Latent code of an incomplete sample: the encoder sees [x*m, m]."""
    return q_a(x, m)


def class_regularizer(classifier, x, y):
    """Mean cross-entropy of ``classifier(x)`` against labels ``y``."""
    return ce_loss(classifier(x), y)


@dataclass
class Batch:
    """One minibatch. For images ``x`` is TP1, ``m`` all ones and ``bg`` the
    encoder input; for factors ``bg`` is unused."""
    x: np.ndarray
    m: np.ndarray
    y: np.ndarray
    cond: np.ndarray = None
    bg: np.ndarray = None


def forward(bundle, batch, m_hat, noise, zero_condition=False, enc_mask=None):
    """Everything the two objectives need, as graph-connected tensors.

    ``enc_mask`` (factors) is the thinned mask for the reconstruction pass.
    """
    out = {}
    if bundle.modality == "image":
        z_a, skips = bundle.encoder_A.encode(batch.bg, bundle.background_mask())
    else:
        z_a, skips = encode_incomplete(bundle.encoder_A, batch.x, batch.m), None
    noise = T.Tensor(np.asarray(noise, dtype=np.float32))
    if bundle.encoder_B is not None:
        z_b = bundle.encoder_B(batch.cond)
        if zero_condition:
            z_b = z_b * 0.0
        z_b_adv = z_b if bundle.adv_through_B else z_b.detach()
        z_real = T.concat([z_a, z_b_adv], axis=1)
        z_fake = T.concat([noise, z_b_adv], axis=1)
    else:
        z_real, z_fake = z_a, noise
    out["z_real"], out["z_fake"], out["skips"] = z_real, z_fake, skips
    out["x_fake"] = bundle.decoder_A(z_fake, skips)
    if enc_mask is not None and bundle.modality == "factors":
        z_a2 = encode_incomplete(bundle.encoder_A, batch.x, enc_mask)
        z_rec = T.concat([z_a2, z_b], axis=1) if bundle.encoder_B is not None else z_a2
    elif bundle.encoder_B is not None:
        z_rec = T.concat([z_a, z_b], axis=1)
    else:
        z_rec = z_real
    out["x_rec"] = bundle.decoder_A(z_rec, skips)
    out["m_hat"] = np.asarray(m_hat, dtype=np.float32)
    return out


def d_objective(bundle, batch, fw, detach=False):
    """Discriminator-step value (``detach=True``: logit form, gradients only
    reach D) or generator-step value (clamped probabilities, so the encoders
    cannot drive it below ``2*log(EPS_P)``)."""
    z_real, z_fake, x_fake = fw["z_real"], fw["z_fake"], fw["x_fake"]
    if detach:
        z_real, z_fake, x_fake = z_real.detach(), z_fake.detach(), x_fake.detach()
    real = bundle.discriminator(batch.x, batch.m, z_real)
    fake = bundle.discriminator(x_fake, fw["m_hat"], z_fake)
    if detach:
        return d_objective_from_logits(real, fake)
    if bundle.g_loss == "nonsaturating":
        # swapped labels: the generator side maximizes log D(fake) + log(1 - D(real))
        return -(T.mean(log_prob_logits(real, 0)) + T.mean(log_prob_logits(fake, 1)))
    return d_objective_from_probs(T.sigmoid(real), T.sigmoid(fake))


def reconstruction(bundle, batch, fw):
    return mse_masked(fw["x_rec"], batch.x, batch.m)


def imputed_for_classifier(bundle, batch, fw):
    """x~ (factors: merge of observed and reconstruction) or x^ (images: the
    whole decoded patch, which is what imputation returns)."""
    if bundle.modality == "image":
        return fw["x_rec"]
    m = np.asarray(batch.m, dtype=np.float32)
    return T.as_tensor(np.asarray(batch.x, np.float32) * m) + fw["x_rec"] * (1.0 - m)


def objectives(bundle, batch, m_hat, noise, zero_condition=False, enc_mask=None):
    """Returns (d_objective, g_objective, parts) for one batch."""
    fw = forward(bundle, batch, m_hat, noise, zero_condition, enc_mask)
    d_obj = d_objective(bundle, batch, fw)
    rec = reconstruction(bundle, batch, fw)
    g_obj = d_obj + rec * bundle.lambda_rec if bundle.lambda_rec else d_obj
    ce = None
    if bundle.classifier is not None and bundle.lambda_ce > 0:
        ce = class_regularizer(bundle.classifier, imputed_for_classifier(bundle, batch, fw), batch.y)
        g_obj = g_obj + ce * bundle.lambda_ce
    return d_obj, g_obj, {"rec": rec, "ce": ce, "fw": fw}


def pbigan_loss(bundle, batch, m_hat, noise):
    if bundle.mode != "pbigan":
        raise ValueError("pbigan_loss needs a bundle in pbigan mode")
    d_obj, g_obj, _ = objectives(bundle, batch, m_hat, noise)
    return d_obj, g_obj


def cpbigan_gan_loss(bundle, batch, m_hat, noise, zero_condition=False):
    """Conditional objective; the class term is excluded (see ``objectives``)."""
    if bundle.mode == "pbigan":
        raise ValueError("cpbigan_gan_loss needs a conditional bundle")
    if bundle.encoder_B is not None and batch.cond is None:
        raise ValueError("conditional data x~B is required (fully observed or imputed)")
    fw = forward(bundle, batch, m_hat, noise, zero_condition)
    d_obj = d_objective(bundle, batch, fw)
    g_obj = d_obj + reconstruction(bundle, batch, fw) * bundle.lambda_rec
    return d_obj, g_obj


# --------------------------------------------------------------- imputation

def decode_factors(bundle, x, m, cond=None, batch_size=256):
    """Decoder output g([q_A(x, m) ; q_B(cond)]) for a factor matrix."""
    x = np.asarray(x, np.float32)
    m = np.asarray(m, np.float32)
    outs = []
    for s in range(0, len(x), batch_size):
        sl = slice(s, s + batch_size)
        z = bundle.encoder_A(x[sl], m[sl])
        if bundle.encoder_B is not None:
            if cond is None:
                zb = T.Tensor(np.zeros((z.shape[0], bundle.d_zB), np.float32))
            else:
                zb = bundle.encoder_B(np.asarray(cond[sl], np.float32))
            z = T.concat([z, zb], axis=1)
        outs.append(bundle.decoder_A(z).data)
    return np.concatenate(outs) if outs else np.zeros_like(x)


def impute_factor_matrix(bundle, x, m, cond=None):
    """Observed entries kept bit-exactly; missing ones from the decoder."""
    x_hat = decode_factors(bundle, x, m, cond)
    return merge_observed(np.asarray(x, np.float32), x_hat.astype(np.float32), m)


def impute_factors(bundle, record):
    fv = record.factors
    img = record.images.latest()
    cond = None
    if bundle.encoder_B is not None:
        if img is None:
            log.warning("record %s: no image timepoint present; imputing factors unconditionally", record.id)
        else:
            cond = img[None]
    filled = impute_factor_matrix(bundle, fv.values[None], fv.mask[None], cond)[0]
    rec = MultiModalRecord(record.id, FactorVector(filled, np.ones_like(fv.mask)), record.images, record.label)
    return ImputationResult(rec, {"factors": factor_provenance(fv.mask)})


def generate_tp1(bundle, tp0, factors=None, batch_size=128):
    """TP1 patches decoded from ``[q_A(TP0 background) ; q_B(factors)]``.

    The whole decoder output is the imputation (nothing of TP1 is observed).
    Deterministic: no noise enters at imputation time.
    """
    tp0 = np.asarray(tp0, np.float32)
    if bundle.encoder_B is not None and factors is None:
        raise ValueError("conditional image imputation needs completed factors")
    bgm = bundle.background_mask()
    outs = []
    for s in range(0, len(tp0), batch_size):
        sl = slice(s, s + batch_size)
        z, skips = bundle.encoder_A.encode(tp0[sl], bgm)
        if bundle.encoder_B is not None:
            z = T.concat([z, bundle.encoder_B(np.asarray(factors[sl], np.float32))], axis=1)
        outs.append(bundle.decoder_A(z, skips).data)
    return np.concatenate(outs).astype(np.float32) if outs else np.zeros_like(tp0)


def impute_image_tp1(bundle, record, factors_complete):
    img = record.images
    if img.tp1_present:
        raise ValueError(f"record {record.id}: TP1 present, nothing to impute")
    if not img.tp0_present:
        raise ValueError(f"record {record.id}: TP0 also missing; apply LOCF or skip")
    fv = factors_complete if isinstance(factors_complete, FactorVector) else FactorVector(
        factors_complete, np.ones(len(factors_complete), np.uint8))
    if not np.all(fv.mask == 1):
        raise ValueError(f"record {record.id}: conditional factors must be complete")
    tp1 = generate_tp1(bundle, img.tp0[None], fv.values[None])[0]
    rec = MultiModalRecord(record.id, record.factors, LongitudinalImage(img.tp0, tp1, True, True), record.label)
    return ImputationResult(rec, {"tp0": OBSERVED, "tp1": GENERATED})


# --------------------------------------------------------------- checkpoints

def save_bundle(bundle, path):
    save_tensors(bundle.all_params().arrays(), path)
    meta = {"modality": bundle.modality, "mode": bundle.mode, "seed": bundle.seed, "d_z": bundle.d_z,
            "lambda_rec": bundle.lambda_rec, "lambda_ce": bundle.lambda_ce, "rec_drop": bundle.rec_drop,
            "g_loss": bundle.g_loss, "adv_through_B": int(bundle.adv_through_B),
            "n_factors": bundle.n_factors, "condition": int(bundle.encoder_B is not None)}
    with open(str(path) + ".meta", "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k} = {v}\n")


def load_bundle(path):
    meta = {}
    with open(str(path) + ".meta") as fh:
        for line in fh:
            k, _, v = line.strip().partition(" = ")
            meta[k] = v
    b = build_bundle(meta["modality"], meta["mode"], int(meta["seed"]), int(meta["n_factors"]),
                     int(meta["d_z"]), float(meta["lambda_rec"]), float(meta["lambda_ce"]),
                     bool(int(meta["condition"])), float(meta["rec_drop"]), meta["g_loss"],
                     bool(int(meta["adv_through_B"])))
    ps = b.all_params()
    arrays = load_tensors(path)
    for k, arr in arrays.items():
        ps[k].data = arr
    return b
