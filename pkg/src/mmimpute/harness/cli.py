"""``mmimpute`` command line.

Exit codes: 0 success, 2 usage or config error, 3 data or I/O error,
4 training error (non-finite values), 5 gradient check failure,
1 anything else.
"""
import argparse
import logging
import os
import sys

import numpy as np

from mmimpute import gan
from mmimpute.data import SPLITS, load_dataset, save_dataset
from mmimpute.diff.params import TrainingError
from mmimpute.downstream import rows_from_csv, rows_to_csv
from mmimpute.harness.config import COL_NAMES, ROW_NAMES, ConfigError, canonical_name, load_config
from mmimpute.harness.pipeline import SeedContext, run_grid, run_sweep
from mmimpute.harness.report import ReportError, emit_report

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN, EXIT_GRAD = 0, 1, 2, 3, 4, 5
log = logging.getLogger("mmimpute")


def _splits_out(datasets, out):
    for d in datasets:
        save_dataset(d, os.path.join(out, d.split))
    print(f"wrote {', '.join(str(len(d)) for d in datasets)} records (train/validation/test) to {out}")


def cmd_generate(args, cfg):
    _splits_out(SeedContext(cfg, args.seed, factor_rate=0.0, tp1_rate=0.0).clean, args.out)


def cmd_corrupt(args, cfg):
    if args.input:
        from mmimpute.harness.pipeline import cell_seed
        from mmimpute.missing import MechanismSpec, corrupt_dataset
        seed = cell_seed(cfg, "corrupt", args.seed)
        drv = cfg["missing.factor_driver"]
        spec = MechanismSpec(cfg["missing.factor_kind"], cfg["missing.factor_rate"], None if drv < 0 else drv,
                             cfg["missing.factor_slope"], seed=seed)
        ds = [corrupt_dataset(load_dataset(os.path.join(args.input, s)), spec, cfg["missing.tp1_rate"], seed,
                              cfg["missing.tp0_rate"]) for s in SPLITS]
    else:
        ds = SeedContext(cfg, args.seed).corrupt
    _splits_out(ds, args.out)


def cmd_impute(args, cfg):
    row = canonical_name(args.image_imputer, "row")
    col = canonical_name(args.factor_imputer, "column")
    ctx = SeedContext(cfg, args.seed)
    fac, imgs = ctx.factors(col), ctx.images(row, col)
    out = []
    for i, d in enumerate(ctx.corrupt):
        n = len(d)
        out.append(d.with_arrays(factor_values=fac[i], factor_masks=np.ones((n, d.n_factors), np.uint8),
                                 tp0=imgs[i][0], tp1=imgs[i][1], presence=np.ones((n, 2), np.uint8)))
    _splits_out(out, args.out)


def cmd_train(args, cfg):
    ctx = SeedContext(cfg, args.seed)
    if args.modality == "factors":
        ctx.factor_bundle(args.mode)
    else:
        ctx.image_bundle(args.mode)
    res = ctx._bundles[(args.modality, args.mode)]
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, f"{args.modality}-{args.mode}-seed{args.seed}")
    gan.save_bundle(res.bundle, stem + ".bin")
    gan.write_curves(res.curves, stem + ".curves.csv")
    print(f"best epoch {res.best_epoch}; wrote {stem}.bin and {stem}.curves.csv")


def _seeds(args, cfg):
    return cfg.replace(grid__seeds=(args.seed,)) if args.seed is not None else cfg


def cmd_grid(args, cfg):
    cfg = _seeds(args, cfg)
    rows = run_grid(cfg, jobs=args.jobs)
    digests = emit_report(cfg, args.out, grid_rows=rows)
    _summary(digests, args.out)
    return EXIT_OK if all(r.status == "ok" for r in rows) else EXIT_TRAIN


def cmd_sweep(args, cfg):
    cfg = _seeds(args, cfg)
    if args.axis:
        cfg = cfg.replace(sweep__axis=args.axis)
    rows = run_sweep(cfg, jobs=args.jobs)
    digests = emit_report(cfg, args.out, sweep_rows=rows)
    _summary(digests, args.out)
    return EXIT_OK if all(r.status == "ok" for r in rows) else EXIT_TRAIN


def cmd_report(args, cfg):
    found = {}
    for name in ("grid.csv", "sweep.csv"):
        path = os.path.join(args.input or args.out, name)
        if os.path.exists(path):
            with open(path) as fh:
                found[name] = rows_from_csv(fh.read())
    if not found:
        raise FileNotFoundError(f"no grid.csv or sweep.csv under {args.input or args.out}")
    digests = emit_report(cfg, args.out, found.get("grid.csv", ()), found.get("sweep.csv", ()))
    _summary(digests, args.out)


def cmd_gradcheck(args, cfg):
    from mmimpute.harness.certify import certify
    seeds = (args.seed,) if args.seed is not None else (0, 1, 2)
    bad = 0
    for name, seed, rep in certify(seeds):
        print(f"{'PASS' if rep.ok else 'FAIL'}  {name:40s} seed {seed}  max rel err {rep.max_rel_err:.2e}")
        if not rep.ok:
            bad += 1
            print(rep.summary())
    return EXIT_GRAD if bad else EXIT_OK


def _summary(digests, out):
    for name, h in digests.items():
        print(f"{os.path.join(out, name)}  sha256 {h[:16]}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (section.key = value lines)")
    common.add_argument("--seed", type=int, default=None, help="seed index (default 0; grid/sweep: all)")
    common.add_argument("--out", default=None, help="output directory (default: output.dir)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for grid/sweep seeds")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="mmimpute", description="Multi-modal adversarial imputation lab.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic cohort")
    c = sub.add_parser("corrupt", parents=[common], help="apply the configured missingness")
    c.add_argument("--in", dest="input", help="clean dataset directory (default: regenerate)")
    i = sub.add_parser("impute", parents=[common], help="write completed datasets for one grid cell")
    i.add_argument("--image-imputer", default="cpbigan", help=f"one of {ROW_NAMES}")
    i.add_argument("--factor-imputer", default="cpbigan", help=f"one of {COL_NAMES}")
    t = sub.add_parser("train", parents=[common], help="train one adversarial imputer")
    t.add_argument("--modality", choices=("factors", "image"), default="factors")
    t.add_argument("--mode", choices=gan.MODES, default="cpbigan")
    sub.add_parser("grid", parents=[common], help="run the imputer grid and write a report")
    s = sub.add_parser("sweep", parents=[common], help="run a missing-rate sweep and write a report")
    s.add_argument("--axis", choices=("factor_rate", "tp1_rate"))
    r = sub.add_parser("report", parents=[common], help="re-emit report files from saved CSVs")
    r.add_argument("--in", dest="input", help="directory holding grid.csv / sweep.csv (default: --out)")
    sub.add_parser("gradcheck", parents=[common], help="certify objective gradients")
    return p


COMMANDS = {"generate": cmd_generate, "corrupt": cmd_corrupt, "impute": cmd_impute, "train": cmd_train,
            "grid": cmd_grid, "sweep": cmd_sweep, "report": cmd_report, "gradcheck": cmd_gradcheck}
NEEDS_SEED = ("generate", "corrupt", "impute", "train")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.out = args.out or cfg["output.dir"]
        if args.command in NEEDS_SEED and args.seed is None:
            args.seed = 0
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        code = COMMANDS[args.command](args, cfg)
        return EXIT_OK if code is None else code
    except ConfigError as e:
        print(f"mmimpute: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as e:
        print(f"mmimpute: training error: {e}", file=sys.stderr)
        return EXIT_TRAIN
    except (OSError, ReportError, ValueError) as e:
        print(f"mmimpute: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        print(f"mmimpute: unexpected {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
