"""Finite-difference certification of every training objective.

Each entry builds fresh parameters and random inputs for one seed and
checks the analytic gradient against central differences. The adversarial
terms are checked with the conditional code left attached, i.e. the full
gradient of the objective; training may detach it, which only removes paths.
"""
import numpy as np

from mmimpute import gan
from mmimpute.data import IMAGE_SHAPE
from mmimpute.diff.gradcheck import grad_check
from mmimpute.downstream import init_mlm, mlm_loss
from mmimpute.gan.model import Batch, d_objective, forward, objectives
from mmimpute.missing import mcar_mask
from mmimpute.rng import make_rng


def _factor_case(mode, seed):
    rng = make_rng("certify", "factors", seed)
    n = 5
    m = mcar_mask((n, 14), 0.3, seed).astype(np.float32)
    x = rng.random((n, 14)).astype(np.float32) * m
    cond = rng.random((n,) + IMAGE_SHAPE).astype(np.float32)
    b = gan.build_bundle("factors", mode, seed, d_z=6, lambda_rec=1.0, lambda_ce=1.0, adv_through_B=True)
    batch = Batch(x, m, rng.integers(0, 2, n), cond if b.conditional else None)
    noise = rng.standard_normal((n, b.d_z)).astype(np.float32)
    return b, batch, noise


def _image_case(mode, seed):
    rng = make_rng("certify", "image", seed)
    n = 2
    x = rng.random((n,) + IMAGE_SHAPE).astype(np.float32)
    b = gan.build_bundle("image", mode, seed, d_z=4, lambda_rec=1.0, lambda_ce=1.0, adv_through_B=True)
    batch = Batch(x, np.ones_like(x), np.array([0, 1]), rng.random((n, 14)).astype(np.float32), x)
    noise = rng.standard_normal((n, b.d_z)).astype(np.float32)
    return b, batch, noise


def _objective(case, pick):
    b, batch, noise = case
    if pick == "d_logit":
        return d_objective(b, batch, forward(b, batch, batch.m, noise), detach=True)
    d_obj, g_obj, parts = objectives(b, batch, batch.m, noise)
    return {"d": d_obj, "g": g_obj, "rec": parts["rec"], "ce": parts["ce"]}[pick]


CHECKS = {
    "pbigan D objective (factors)": lambda s: (_factor_case("pbigan", s), "d"),
    "pbigan G objective (factors)": lambda s: (_factor_case("pbigan", s), "g"),
    "cpbigan D objective (factors)": lambda s: (_factor_case("cpbigan", s), "d"),
    "cpbigan G objective + CE (factors)": lambda s: (_factor_case("cpbigan", s), "g"),
    "discriminator step, logit form": lambda s: (_factor_case("cpbigan", s), "d_logit"),
    "cpbigan D objective (image)": lambda s: (_image_case("cpbigan", s), "d"),
    "cpbigan G objective + CE (image)": lambda s: (_image_case("cpbigan", s), "g"),
    "class cross-entropy term": lambda s: (_factor_case("cpbigan", s), "ce"),
    "reconstruction term": lambda s: (_factor_case("cpbigan", s), "rec"),
}


def _mlm_report(seed, tol):
    rng = make_rng("certify", "mlm", seed)
    ps = init_mlm(seed, "both")
    f = rng.random((4, 14)).astype(np.float32)
    t0, t1 = (rng.random((4,) + IMAGE_SHAPE).astype(np.float32) for _ in range(2))
    y = np.array([0, 1, 1, 0])
    return grad_check(lambda: mlm_loss(ps, "both", f, t0, t1, y), ps, tol=tol, seed=seed)


def certify(seeds=(0, 1, 2), tol=1e-3, per_tensor=4):
    """[(name, seed, GradCheckReport)] for every objective and seed."""
    out = []
    for name, make in CHECKS.items():
        for s in seeds:
            case, pick = make(s)
            params = case[0].all_params()
            # the logit-form step sees generator outputs as constants
            names = [k for k in params.names() if k.startswith("discriminator.")] if pick == "d_logit" else None
            rep = grad_check(lambda: _objective(case, pick), params, tol=tol, seed=s,
                             per_tensor=per_tensor, names=names)
            out.append((name, s, rep))
    for s in seeds:
        out.append(("MLM loss", s, _mlm_report(s, tol)))
    return out
