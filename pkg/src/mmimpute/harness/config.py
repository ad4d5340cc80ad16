"""Experiment configuration: ``section.key = value`` lines, ``#`` comments.

Every key has a typed default below; unknown keys and unparsable values are
errors. Lists are comma separated. The digest hashes the canonical rendering
of the fully-resolved config, so two files that differ only in comments,
ordering or defaults spelled out produce the same digest.
"""
import hashlib
import os
from dataclasses import dataclass

ROW_NAMES = ("drop-image", "locf", "pbigan", "cpbigan_sharp", "cpbigan", "full")
COL_NAMES = ("drop-factors", "mean", "soft-impute", "pbigan", "cpbigan", "full")
ALIASES = {"image-only-ablation": "drop-image", "factor-only-ablation": "drop-factors",
           "fully-observed": "full", "LOCF": "locf"}


def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _names(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


# key -> (parser, default)
SCHEMA = {
    "generator.n": (int, 1000),
    "generator.class_balance": (float, 0.5),
    "generator.noise_scale": (float, 1.0),
    "generator.signal_strength": (float, 1.0),
    "missing.factor_kind": (str, "MCAR"),
    "missing.factor_rate": (float, 0.3),
    "missing.factor_driver": (int, -1),
    "missing.factor_slope": (float, 2.0),
    "missing.tp1_rate": (float, 0.5),
    "missing.tp0_rate": (float, 0.0),
    "gan.d_z": (int, 64),
    "gan.factor_lambda_rec": (float, 10.0),
    "gan.image_lambda_rec": (float, 100.0),
    "gan.lambda_ce": (float, 1.0),
    "gan.rec_drop": (float, 0.3),
    "gan.g_loss": (str, "minimax"),
    "gan.adv_through_B": (int, 0),
    "gan.factor_epochs": (int, 100),
    "gan.image_epochs": (int, 100),
    "gan.batch_size": (int, 64),
    "gan.factor_lr": (float, 1e-3),
    "gan.image_lr": (float, 3e-4),
    "gan.probe_every": (int, 20),
    "gan.pretrain_epochs": (int, 0),
    "gan.image_probe": (int, 0),
    "mlm.epochs": (int, 40),
    "mlm.batch_size": (int, 64),
    "mlm.lr": (float, 2e-3),
    "soft_impute.lams": (_floats, (0.3, 1.0, 3.0)),
    "soft_impute.tol": (float, 1e-5),
    "soft_impute.max_iter": (int, 500),
    "grid.rows": (_names, ROW_NAMES),
    "grid.columns": (_names, COL_NAMES),
    "grid.seeds": (_ints, (0, 1, 2, 3, 4)),
    "grid.global_seed": (int, 0),
    "grid.bootstrap_n": (int, 2000),
    "sweep.axis": (str, "factor_rate"),
    "sweep.rates": (_floats, (0.0, 0.2, 0.4, 0.6, 0.8)),
    "sweep.methods": (_names, ("pbigan", "cpbigan")),
    "output.dir": (str, "runs"),
}


class ConfigError(ValueError):
    pass


def _render(v):
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    values: tuple  # sorted (key, value) pairs

    def __getitem__(self, key):
        return dict(self.values)[key]

    def get(self, key, default=None):
        return dict(self.values).get(key, default)

    def replace(self, **kw):
        """``cfg.replace(gan__image_lr=1e-3)``; double underscore stands for the dot."""
        d = dict(self.values)
        for k, v in kw.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            d[key] = v
        return make_config(d)

    def canonical(self):
        return "".join(f"{k} = {_render(v)}\n" for k, v in self.values)

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def section(self, name):
        return {k.split(".", 1)[1]: v for k, v in self.values if k.startswith(name + ".")}


def canonical_name(name, kind):
    name = ALIASES.get(name, name)
    valid = ROW_NAMES if kind == "row" else COL_NAMES
    if name not in valid:
        raise ConfigError(f"unknown {kind} imputer {name!r}; expected one of {valid}")
    return name


def make_config(overrides=None):
    d = {k: default for k, (_, default) in SCHEMA.items()}
    for k, v in (overrides or {}).items():
        if k not in SCHEMA:
            raise ConfigError(f"unknown config key {k!r}")
        d[k] = v
    d["grid.rows"] = tuple(canonical_name(r, "row") for r in d["grid.rows"])
    d["grid.columns"] = tuple(canonical_name(c, "column") for c in d["grid.columns"])
    if not d["grid.seeds"]:
        raise ConfigError("grid.seeds must be non-empty")
    if d["sweep.axis"] not in ("factor_rate", "tp1_rate"):
        raise ConfigError("sweep.axis must be factor_rate or tp1_rate")
    for m in d["sweep.methods"]:
        if m not in ("pbigan", "cpbigan"):
            raise ConfigError(f"sweep method {m!r} not in (pbigan, cpbigan)")
    if d["missing.factor_kind"] not in ("MCAR", "MAR", "MNAR"):
        raise ConfigError(f"missing.factor_kind {d['missing.factor_kind']!r} not in MCAR/MAR/MNAR")
    return ExperimentConfig(tuple(sorted(d.items())))


def parse_config(text, source="<string>"):
    over = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in over:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            over[key] = SCHEMA[key][0](val)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None
    return make_config(over)


def load_config(path=None):
    if path is None:
        return make_config()
    with open(path) as fh:
        return parse_config(fh.read(), os.fspath(path))
