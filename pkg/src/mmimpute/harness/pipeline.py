"""Per-seed experiment state and the grid / sweep drivers.

A :class:`SeedContext` owns one synthetic cohort, its corruption and the
imputers trained on it. Imputers are trained lazily and cached, with seeds
derived from their names only, so any cell computed alone matches the same
cell computed inside the full grid.

Cell pipeline: corrupt -> impute factors -> impute TP1 (conditioned on the
completed factors) -> train MLM on train, select on validation -> test AUC.
"""
import logging
import multiprocessing
import traceback
from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

from mmimpute import baselines, gan
from mmimpute.data import CENTER
from mmimpute.diff.optim import AdamConfig
from mmimpute.downstream import MetricsRow, MlmData, auc, bootstrap_pvalue, probe_auc, train_mlm
from mmimpute.missing import MechanismSpec, corrupt_dataset, hash_seed, mcar_mask
from mmimpute.synth import GeneratorConfig, make_dataset

log = logging.getLogger(__name__)

REFERENCE = ("pbigan", "pbigan")
SPLIT_IDX = {"train": 0, "validation": 1, "test": 2}


def cell_seed(cfg, *parts):
    return hash_seed(cfg["grid.global_seed"], *parts) % (2 ** 31)


def bundle_kwargs(c, modality):
    return dict(d_z=c["gan.d_z"], lambda_rec=c[f"gan.{'factor' if modality == 'factors' else 'image'}_lambda_rec"],
                lambda_ce=c["gan.lambda_ce"],
                rec_drop=c["gan.rec_drop"], g_loss=c["gan.g_loss"], adv_through_B=bool(c["gan.adv_through_B"]))


def _pool(images, k=4):
    """Average-pooled central window as probe features."""
    c = np.asarray(images)[:, 0, CENTER, CENTER]
    n, h, w = c.shape
    return c.reshape(n, h // k, k, w // k, k).mean(axis=(2, 4)).reshape(n, -1)


class SeedContext:
    def __init__(self, cfg, seed_index, factor_rate=None, tp1_rate=None):
        self.cfg = cfg
        self.seed_index = seed_index
        self.factor_rate = cfg["missing.factor_rate"] if factor_rate is None else factor_rate
        self.tp1_rate = cfg["missing.tp1_rate"] if tp1_rate is None else tp1_rate
        g = cfg.section("generator")
        gen = GeneratorConfig(g["n"], g["class_balance"], g["noise_scale"], g["signal_strength"],
                              seed=cell_seed(cfg, "data", seed_index))
        self.clean = make_dataset(gen)
        self.corrupt_seed = cell_seed(cfg, "corrupt", seed_index)
        driver = cfg["missing.factor_driver"]
        self.spec = MechanismSpec(cfg["missing.factor_kind"], self.factor_rate,
                                  None if driver < 0 else driver, cfg["missing.factor_slope"],
                                  seed=self.corrupt_seed)
        self.corrupt = tuple(corrupt_dataset(d, self.spec, self.tp1_rate, self.corrupt_seed,
                                             cfg["missing.tp0_rate"]) for d in self.clean)
        self.labels = tuple(d.labels() for d in self.clean)
        self._factors, self._bundles, self._images = {}, {}, {}
        self.mlm_scores = {}

    # ------------------------------------------------------------ factors
    def _gan_adam(self, modality):
        epochs = self.cfg[f"gan.{modality}_epochs"]
        return AdamConfig(lr=self.cfg[f"gan.{modality}_lr"], max_epochs=max(epochs, 1))

    def factor_bundle(self, mode):
        key = ("factors", mode)
        if key not in self._bundles:
            c = self.cfg
            seed = cell_seed(c, "imputer", "factors", mode, self.seed_index)
            b = gan.build_bundle("factors", mode, seed, **bundle_kwargs(c, "factors"))
            tr, va = self.corrupt[0], self.corrupt[1]

            def probe(bundle):
                x = [gan.impute_factor_matrix(bundle, d.factor_values(), d.factor_masks(),
                                              d.latest_images() if bundle.conditional else None)
                     for d in (tr, va)]
                return probe_auc(x[0], self.labels[0], x[1], self.labels[1])

            res = gan.train(b, gan.factor_gan_data(tr), self.spec, self._gan_adam("factor"),
                            epochs=c["gan.factor_epochs"], batch_size=c["gan.batch_size"], seed=seed,
                            probe=probe, probe_every=c["gan.probe_every"],
                            pretrain_epochs=c["gan.pretrain_epochs"])
            self._bundles[key] = res
        return self._bundles[key].bundle

    def factors(self, col):
        """Completed factor matrices (train, validation, test) for a column imputer."""
        if col == "drop-factors":
            col = "cpbigan"  # only used to condition image imputers
        if col in self._factors:
            return self._factors[col]
        vals = [d.factor_values() for d in self.corrupt]
        masks = [d.factor_masks() for d in self.corrupt]
        if col == "full" or self.factor_rate == 0.0:
            out = tuple(d.factor_values() for d in self.clean)
        elif col == "mean":
            mu = baselines.column_means(vals[0], masks[0])
            out = tuple(baselines.mean_impute_matrix(mu, v, m) for v, m in zip(vals, masks))
        elif col == "soft-impute":
            out = self._soft_impute(vals, masks)
        elif col in ("pbigan", "cpbigan"):
            b = self.factor_bundle(col)
            out = tuple(gan.impute_factor_matrix(b, v, m, d.latest_images() if b.conditional else None)
                        for v, m, d in zip(vals, masks, self.corrupt))
        else:
            raise ValueError(f"unknown factor imputer {col!r}")
        self._factors[col] = out
        return out

    def _soft_impute(self, vals, masks):
        """Transductive over all splits; lambda picked on 10% held-out observed entries."""
        c = self.cfg
        x = np.concatenate(vals).astype(np.float64)
        m = np.concatenate(masks).astype(bool)
        hold = (mcar_mask(m.shape, 0.1, cell_seed(c, "soft-holdout", self.seed_index)) == 0) & m
        fit = m & ~hold
        best = None
        path = baselines.soft_impute_path(x, fit, c["soft_impute.lams"], c["soft_impute.tol"],
                                          c["soft_impute.max_iter"])
        for lam in sorted(path, reverse=True):
            err = float(np.mean((path[lam][hold] - x[hold]) ** 2)) if hold.any() else 0.0
            if best is None or err < best[0]:
                best = (err, lam)
        cfg = baselines.SoftImputeConfig(best[1], c["soft_impute.tol"], c["soft_impute.max_iter"])
        full = baselines.soft_impute_fill(x, m, cfg, x0=path[best[1]])
        full = np.clip(full, 0.0, 1.0).astype(np.float32)
        full = np.where(m, x.astype(np.float32), full)
        cuts = np.cumsum([len(v) for v in vals])[:-1]
        return tuple(np.split(full, cuts))

    # ------------------------------------------------------------- images
    def image_bundle(self, mode):
        key = ("image", mode)
        if key not in self._bundles:
            c = self.cfg
            seed = cell_seed(c, "imputer", "image", mode, self.seed_index)
            b = gan.build_bundle("image", mode, seed, **bundle_kwargs(c, "image"))
            cond = self.factors("cpbigan")

            def probe(bundle):
                feats = []
                for i in (0, 1):
                    d = self.corrupt[i]
                    ok = d.presence()[:, 0].astype(bool)
                    gen_tp1 = gan.generate_tp1(bundle, d.tp0()[ok], cond[i][ok])
                    feats.append((_pool(gen_tp1), self.labels[i][ok]))
                return probe_auc(feats[0][0], feats[0][1], feats[1][0], feats[1][1])

            data = gan.image_gan_data(self.corrupt[0], cond[0])
            res = gan.train(b, data, None, self._gan_adam("image"), epochs=c["gan.image_epochs"],
                            batch_size=c["gan.batch_size"], seed=seed,
                            probe=probe if c["gan.image_probe"] else None,
                            probe_every=c["gan.probe_every"], pretrain_epochs=c["gan.pretrain_epochs"])
            self._bundles[key] = res
        return self._bundles[key].bundle

    def images(self, row, col):
        """(tp0, tp1) arrays per split after TP1 imputation."""
        key = (row, col if row in ("pbigan", "cpbigan", "cpbigan_sharp") else None)
        if key in self._images:
            return self._images[key]
        out = []
        for i, d in enumerate(self.corrupt):
            tp0, tp1, pres = d.tp0(), d.tp1(), d.presence()
            if row == "full" or self.tp1_rate == 0.0:
                c = self.clean[i]
                out.append((c.tp0(), c.tp1()))
            elif row in ("locf", "drop-image"):
                out.append(baselines.locf_arrays(tp0, tp1, pres))
            else:
                b = self.image_bundle(row)
                miss = ~pres[:, 1].astype(bool) & pres[:, 0].astype(bool)
                new1 = tp1.copy()
                if miss.any():
                    cond = self.factors(col)[i] if b.conditional else None
                    new1[miss] = gan.generate_tp1(b, tp0[miss], None if cond is None else cond[miss])
                t0, t1 = baselines.locf_arrays(tp0, new1, np.column_stack([pres[:, 0], pres[:, 1] | miss]))
                out.append((t0, t1))
        self._images[key] = tuple(out)
        return self._images[key]

    # --------------------------------------------------------------- cells
    def mlm_data(self, row, col):
        fac = self.factors(col)
        imgs = self.images(row, col)
        return [MlmData(fac[i], imgs[i][0], imgs[i][1], self.labels[i]) for i in range(3)]

    def run_cell(self, row, col, mlm_seed):
        paths = "both"
        if row == "drop-image" and col == "drop-factors":
            raise ValueError("dropping both modalities leaves nothing to train on")
        if row == "drop-image":
            paths = "factors"
        elif col == "drop-factors":
            paths = "image"
        tr, va, te = self.mlm_data(row, col)
        c = self.cfg
        model = train_mlm(tr, va, AdamConfig(lr=c["mlm.lr"], max_epochs=max(c["mlm.epochs"], 1)),
                          seed=mlm_seed, epochs=c["mlm.epochs"], batch_size=c["mlm.batch_size"], paths=paths)
        scores = model.scores(te.factors, te.tp0, te.tp1)
        return scores, auc(scores, te.y)


def _mechanism_name(cfg):
    return cfg["missing.factor_kind"]


def _map_seeds(fn, seeds, jobs):
    """``[fn(s) for s in seeds]``, optionally across worker processes; order kept."""
    if jobs <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(jobs, len(seeds)), mp_context=ctx) as ex:
        return list(ex.map(fn, seeds))


def run_grid(cfg, cells=None, contexts=None, jobs=1):
    """One MetricsRow per (row, column, seed), ordered by seed, then cell.

    ``cells`` restricts to a subset of (row, column) pairs. A failing cell is
    recorded with status ``error:<Type>`` and the grid continues. ``jobs > 1``
    runs seeds in separate processes; the result is identical.
    """
    todo = cells or [(r, c) for r in cfg["grid.rows"] for c in cfg["grid.columns"]
                     if not (r == "drop-image" and c == "drop-factors")]
    seeds = list(cfg["grid.seeds"])
    if contexts:
        jobs = 1
    per_seed = _map_seeds(partial(_grid_seed, cfg, todo, contexts), seeds, jobs)
    return [row for rows in per_seed for row in rows]


def _grid_seed(cfg, todo, contexts, s):
    rows = []
    ctx = (contexts or {}).get(s) or SeedContext(cfg, s)
    ref = None
    for r, c in todo:
        base = dict(image_imputer=r, factor_imputer=c, mechanism=_mechanism_name(cfg),
                    factor_rate=ctx.factor_rate, tp1_rate=ctx.tp1_rate, seed=s)
        try:
            scores, a = _cell_scores(ctx, cfg, r, c, s)
            p = float("nan")
            if (r, c) != REFERENCE:
                if ref is None:
                    ref = _cell_scores(ctx, cfg, *REFERENCE, s)[0]
                p = bootstrap_pvalue(scores, ref, ctx.labels[2], cfg["grid.bootstrap_n"],
                                     seed=cell_seed(cfg, "bootstrap", r, c, s))
            rows.append(MetricsRow(auc=a, p_value=p, **base))
        except Exception as e:  # noqa: BLE001 - recorded, grid continues
            log.error("cell %s/%s seed %s failed: %s", r, c, s, e)
            log.debug(traceback.format_exc())
            rows.append(MetricsRow(auc=float("nan"), status=f"error:{type(e).__name__}", **base))
    return rows


def _cell_scores(ctx, cfg, r, c, s):
    key = (r, c)
    if key not in ctx.mlm_scores:
        ctx.mlm_scores[key] = ctx.run_cell(r, c, cell_seed(cfg, r, c, s))
    return ctx.mlm_scores[key]


def run_sweep(cfg, axis=None, rates=None, paths=None, jobs=1):
    """AUC per (rate, method, seed) along one missingness axis.

    For ``factor_rate`` the factor imputer varies (factor-only model by
    default); for ``tp1_rate`` the TP1 imputer varies (image-only model).
    Factor and TP1 rates off the swept axis are held at zero so a rate of 0.0
    means fully observed data and every method yields the same AUC.
    """
    axis = axis or cfg["sweep.axis"]
    rates = tuple(cfg["sweep.rates"] if rates is None else rates)
    if 0.0 not in rates:
        raise ValueError("sweep rates must include 0.0 (fully-observed start point)")
    if axis not in ("factor_rate", "tp1_rate"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    paths = paths or ("factors" if axis == "factor_rate" else "image")
    fn = partial(_sweep_seed, cfg, axis, paths)
    pairs = [(rate, s) for rate in rates for s in cfg["grid.seeds"]]
    return [row for rows in _map_seeds(fn, pairs, jobs) for row in rows]


def _sweep_seed(cfg, axis, paths, pair):
    rate, s = pair
    out = []
    kw = {"factor_rate": rate, "tp1_rate": 0.0} if axis == "factor_rate" else \
        {"factor_rate": 0.0, "tp1_rate": rate}
    ctx = SeedContext(cfg, s, **kw)
    mlm_seed = cell_seed(cfg, "sweep", axis, paths, s)
    for method in cfg["sweep.methods"]:
        row, col = ("drop-image", method) if axis == "factor_rate" else (method, "drop-factors")
        if paths == "both":
            row, col = (("full", method) if axis == "factor_rate" else (method, "full"))
        base = dict(image_imputer=row, factor_imputer=col, mechanism=_mechanism_name(cfg),
                    factor_rate=kw["factor_rate"], tp1_rate=kw["tp1_rate"], seed=s)
        try:
            _, a = ctx.run_cell(row, col, mlm_seed)
            out.append(MetricsRow(auc=a, **base))
        except Exception as e:  # noqa: BLE001
            log.error("sweep %s=%s %s seed %s failed: %s", axis, rate, method, s, e)
            out.append(MetricsRow(auc=float("nan"), status=f"error:{type(e).__name__}", **base))
    return out
