"""Finite-difference gradient checker (central differences, float64)."""
from dataclasses import dataclass, field

import numpy as np

from mmimpute.diff import tensor as T
from mmimpute.rng import make_rng


@dataclass
class GradCheckReport:
    tol: float
    checked: int = 0
    skipped_kinks: int = 0
    failures: list = field(default_factory=list)
    worst: list = field(default_factory=list)  # (rel_err, name, index, analytic, numeric)

    @property
    def ok(self):
        return self.checked > 0 and not self.failures

    @property
    def max_rel_err(self):
        return self.worst[0][0] if self.worst else 0.0

    def summary(self):
        head = (f"grad_check: {'PASS' if self.ok else 'FAIL'} checked={self.checked} "
                f"kink-skipped={self.skipped_kinks} max_rel_err={self.max_rel_err:.3e} tol={self.tol:g}")
        lines = [head]
        for err, name, idx, a, n in self.worst[:5]:
            lines.append(f"  {name}{list(idx)}: rel={err:.3e} analytic={a:.6e} numeric={n:.6e}")
        return "\n".join(lines)


def _eval(fn):
    T.KINK_LOG = []
    try:
        val = float(fn().data)
        return val, tuple(T.KINK_LOG)
    finally:
        T.KINK_LOG = None


def grad_check(fn, params, tol=1e-3, h=1e-3, per_tensor=6, seed=0, names=None, floor=1e-6):
    """Compare autodiff gradients of ``fn()`` with central differences.

    ``fn`` takes no arguments and returns a scalar Tensor computed from the
    tensors in ``params``. Parameters are promoted to float64 for the check
    and restored afterwards. Coordinates whose +h/-h evaluations take
    different branches of a piecewise op are skipped (reported as kinks).
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = make_rng("grad_check", seed)
    names = list(names) if names is not None else params.names()
    saved = {k: params[k].data for k in names}
    report = GradCheckReport(tol=tol)
    try:
        for k in names:
            params[k].data = saved[k].astype(np.float64)
            params[k].grad = None
        out = fn()
        out.backward()
        analytic = {k: (params[k].grad if params[k].grad is not None
                        else np.zeros_like(params[k].data)) for k in names}
        errs = []
        for k in names:
            data = params[k].data
            size = data.size
            picks = rng.choice(size, size=min(per_tensor, size), replace=False)
            for flat in np.sort(picks):
                idx = np.unravel_index(flat, data.shape)
                orig = data[idx]
                data[idx] = orig + h
                fp, kp = _eval(fn)
                data[idx] = orig - h
                fm, km = _eval(fn)
                data[idx] = orig
                if kp != km:
                    report.skipped_kinks += 1
                    continue
                num = (fp - fm) / (2 * h)
                a = float(analytic[k][idx])
                rel = abs(a - num) / max(abs(a), abs(num), floor)
                report.checked += 1
                errs.append((rel, k, tuple(int(i) for i in idx), a, num))
                if rel > tol:
                    report.failures.append(errs[-1])
        errs.sort(key=lambda e: -e[0])
        report.worst = errs[:10]
    finally:
        for k in names:
            params[k].data = saved[k]
            params[k].grad = None
    return report
