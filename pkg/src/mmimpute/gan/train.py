"""Alternating adversarial training with probe-based checkpoint selection."""
import csv
import logging
from dataclasses import dataclass

import numpy as np

from mmimpute.diff import tensor as T
from mmimpute.diff.optim import AdamConfig, adam_step
from mmimpute.diff.params import TrainingError
from mmimpute.gan.model import Batch, class_regularizer, d_objective, forward, imputed_for_classifier, reconstruction
from mmimpute.missing import MechanismSpec, sample_fake_mask
from mmimpute.rng import make_rng

log = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "step", "d_loss", "g_loss", "ce", "rec")


@dataclass
class GanData:
    """Training arrays. ``bg`` is the background fed to the image encoder."""
    x: np.ndarray
    m: np.ndarray
    y: np.ndarray
    cond: np.ndarray = None
    bg: np.ndarray = None

    def __len__(self):
        return len(self.x)

    def batch(self, idx):
        pick = lambda a: None if a is None else a[idx]
        return Batch(self.x[idx], self.m[idx], self.y[idx], pick(self.cond), pick(self.bg))


def factor_gan_data(d):
    """Factors as target modality; latest present image as the condition."""
    return GanData(d.factor_values(), d.factor_masks().astype(np.float32), d.labels(), d.latest_images())


def image_gan_data(d, factors_complete):
    """TP1 as target over records whose TP1 is present (m = 1 samples only)."""
    keep = d.presence()[:, 1].astype(bool)
    tp1 = d.tp1()[keep]
    return GanData(tp1, np.ones(len(tp1), np.float32)[:, None, None, None] * np.ones((1,) + tp1.shape[1:], np.float32),
                   d.labels()[keep], np.asarray(factors_complete, np.float32)[keep], tp1)


@dataclass
class TrainResult:
    bundle: object
    curves: list
    best_epoch: int
    probe_history: list


def _fake_masks(bundle, spec, shape, seed, pool):
    if bundle.modality == "image":
        return np.ones(shape, np.float32)
    return sample_fake_mask(spec, shape, seed, pool).astype(np.float32)


def _step(nets, cfg):
    for net in nets:
        adam_step(net.params, net.params.grads(), cfg)


def _zero(nets):
    for net in nets:
        net.params.zero_grad()


def _check(value, what, epoch, step):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} at epoch {epoch}, batch {step}")


def train(bundle, data, spec=None, adam_cfg=None, epochs=None, batch_size=64, seed=0,
          probe=None, probe_every=20, freeze_generator=False, pretrain_epochs=0):
    """Per batch: one discriminator ascent step, one generator/encoder descent
    step (GAN objective + lambda_rec * rec + lambda_ce * CE), then one
    classifier step on real data. ``probe(bundle) -> score`` is evaluated every
    ``probe_every`` epochs and at the end; the best-scoring parameters are
    restored (ties keep the earlier epoch).
    """
    cfg = adam_cfg or AdamConfig()
    epochs = cfg.max_epochs if epochs is None else epochs
    if epochs > cfg.max_epochs:
        raise ValueError(f"epochs {epochs} exceeds max_epochs {cfg.max_epochs}")
    spec = spec or MechanismSpec("MCAR", 0.0)
    if bundle.encoder_B is not None and data.cond is None:
        raise ValueError("conditional bundle needs conditioning data")
    gen = [n for n in (bundle.encoder_A, bundle.encoder_B, bundle.decoder_A) if n is not None]
    disc, clf = bundle.discriminator, bundle.classifier
    every = [disc] + gen + ([clf] if clf is not None else [])
    n = len(data)
    pool = data.m if bundle.modality == "factors" else None
    order_rng = make_rng("gan-order", seed)
    noise_rng = make_rng("gan-noise", seed)
    drop_rng = make_rng("gan-rec-drop", seed)

    if clf is not None and pretrain_epochs:
        for ep in range(pretrain_epochs):
            for s in range(0, n, batch_size):
                idx = order_rng.permutation(n)[:batch_size]
                b = data.batch(idx)
                _zero([clf])
                class_regularizer(clf, _real_for_classifier(bundle, b), b.y).backward()
                _step([clf], cfg)

    curves, probes = [], []
    best = (-np.inf, 0, None)
    step = 0
    for epoch in range(1, epochs + 1):
        perm = order_rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = np.sort(perm[s:s + batch_size])
            b = data.batch(idx)
            shape = b.m.shape
            m_hat = _fake_masks(bundle, spec, shape, (seed, epoch, step), pool)
            noise = noise_rng.standard_normal((len(idx), bundle.d_z)).astype(np.float32)
            enc_mask = None
            if bundle.rec_drop > 0:
                enc_mask = b.m * (drop_rng.random(shape) >= bundle.rec_drop)

            # discriminator ascent on detached generator outputs
            fw = forward(bundle, b, m_hat, noise, enc_mask=enc_mask)
            _zero(every)
            d_obj = d_objective(bundle, b, fw, detach=True)
            _check(d_obj.item(), "discriminator objective", epoch, step)
            (-d_obj).backward()
            _step([disc], cfg)

            # generator / encoder descent against the updated discriminator
            g_val = ce_val = rec_val = np.nan
            if not freeze_generator:
                _zero(every)
                g_obj = d_objective(bundle, b, fw)
                rec = reconstruction(bundle, b, fw)
                rec_val = rec.item()
                if bundle.lambda_rec:
                    g_obj = g_obj + rec * bundle.lambda_rec
                x_tilde = imputed_for_classifier(bundle, b, fw)
                if clf is not None:
                    ce = class_regularizer(clf, x_tilde, b.y)
                    ce_val = ce.item()
                    g_obj = g_obj + ce * bundle.lambda_ce
                g_val = g_obj.item()
                _check(g_val, "generator objective", epoch, step)
                g_obj.backward()
                _step(gen, cfg)

                if clf is not None:
                    _zero([clf])
                    real = _real_for_classifier(bundle, b, x_tilde)
                    class_regularizer(clf, real, b.y).backward()
                    _step([clf], cfg)
            curves.append((epoch, step, -d_obj.item(), g_val, ce_val, rec_val))
            step += 1
        for net in every:
            net.params.check_finite(f"after epoch {epoch}")
        if probe is not None and (epoch % probe_every == 0 or epoch == epochs):
            score = float(probe(bundle))
            probes.append((epoch, score))
            if score > best[0]:
                best = (score, epoch, [net.params.snapshot() for net in every])
    best_epoch = epochs
    if best[2] is not None:
        best_epoch = best[1]
        for net, snap in zip(every, best[2]):
            net.params.load(snap)
    return TrainResult(bundle, curves, best_epoch, probes)


def _real_for_classifier(bundle, b, x_tilde=None):
    """C learns from real targets: TP1 itself, or the detached merged factors."""
    if bundle.modality == "image":
        return T.Tensor(np.asarray(b.x, np.float32))
    if x_tilde is None:
        return T.Tensor(np.asarray(b.x, np.float32) * np.asarray(b.m, np.float32))
    return x_tilde.detach()


def write_curves(curves, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for row in curves:
            w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])


def read_curves(path):
    with open(path) as fh:
        r = csv.reader(fh)
        head = next(r)
        if tuple(head) != CURVE_FIELDS:
            raise ValueError(f"{path}: unexpected header {head}")
        return [(int(a), int(b), *map(float, rest)) for a, b, *rest in r]
