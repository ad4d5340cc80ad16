import hashlib
import math
import os
import re

import numpy as np
import pytest

from mmimpute.data import load_dataset
from mmimpute.downstream import MetricsRow, rows_from_csv
from mmimpute.harness import cli
from mmimpute.harness.config import (ConfigError, canonical_name, load_config, make_config, parse_config)
from mmimpute.harness.pipeline import SeedContext, cell_seed, run_grid, run_sweep
from mmimpute.harness.report import ReportError, emit_report, sweep_series, sweep_svg

DEFAULT_CFG = os.path.join(os.path.dirname(__file__), "..", "src", "mmimpute", "configs", "default.cfg")

TINY = """
generator.n = 100
gan.d_z = 8
gan.factor_epochs = 2
gan.image_epochs = 2
gan.probe_every = 1
mlm.epochs = 2
grid.seeds = 0
grid.bootstrap_n = 50
soft_impute.max_iter = 50
"""


@pytest.fixture(scope="module")
def tiny_cfg():
    return parse_config(TINY, "tiny")


# ------------------------------------------------------------------ config

def test_default_file_matches_builtin_defaults():
    assert load_config(DEFAULT_CFG).digest() == make_config().digest()


def test_digest_ignores_comments_order_and_spelled_defaults():
    a = parse_config("gan.factor_lr = 0.001\n# note\nmlm.epochs = 3\n")
    b = parse_config("mlm.epochs = 3   # trailing\n\ngan.d_z = 64\n")
    assert a.digest() == b.digest()
    assert a.digest() != parse_config("mlm.epochs = 4\n").digest()


@pytest.mark.parametrize("text, where", [
    ("gan.image_lr = 3e-4\nbogus.key = 1\n", "cfg:2"),
    ("mlm.epochs = three\n", "cfg:1"),
    ("gan.image_lr = 1\ngan.image_lr = 2\n", "cfg:2"),
    ("just words\n", "cfg:1"),
])
def test_config_errors_carry_location(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text, "cfg")


def test_aliases_resolve_and_unknown_names_fail():
    assert canonical_name("image-only-ablation", "row") == "drop-image"
    assert canonical_name("fully-observed", "column") == "full"
    assert canonical_name("LOCF", "row") == "locf"
    with pytest.raises(ConfigError):
        canonical_name("mice", "column")
    cfg = parse_config("grid.rows = LOCF, fully-observed\n")
    assert cfg["grid.rows"] == ("locf", "full")
    with pytest.raises(ConfigError):
        parse_config("grid.seeds = \n")


def test_replace_and_sections():
    cfg = make_config().replace(gan__image_lr=0.5)
    assert cfg["gan.image_lr"] == 0.5 and cfg.section("gan")["image_lr"] == 0.5
    with pytest.raises(ConfigError):
        make_config().replace(gan__nope=1)


def test_cell_seeds_differ_by_name():
    cfg = make_config()
    assert cell_seed(cfg, "a", 0) == cell_seed(cfg, "a", 0) != cell_seed(cfg, "b", 0)


# ------------------------------------------------------------------ grid

def test_grid_two_by_two(tiny_cfg):
    cfg = tiny_cfg.replace(grid__rows=("locf", "cpbigan"), grid__columns=("mean", "pbigan"))
    rows = run_grid(cfg)
    assert [(r.image_imputer, r.factor_imputer) for r in rows] == [
        ("locf", "mean"), ("locf", "pbigan"), ("cpbigan", "mean"), ("cpbigan", "pbigan")]
    assert all(r.status == "ok" and 0 <= r.auc <= 1 for r in rows)
    assert all(0 <= r.p_value <= 1 for r in rows)


def test_cell_isolation_and_rerun(tiny_cfg):
    cells = [("locf", "soft-impute"), ("pbigan", "pbigan"), ("drop-image", "cpbigan")]
    full = run_grid(tiny_cfg, cells=cells)
    alone = run_grid(tiny_cfg, cells=[cells[2]])
    assert alone[0] == full[2]
    assert run_grid(tiny_cfg, cells=cells) == full


def test_reference_cell_has_no_pvalue(tiny_cfg):
    row = run_grid(tiny_cfg, cells=[("pbigan", "pbigan")])[0]
    assert math.isnan(row.p_value)


def test_failing_cell_recorded(tiny_cfg):
    rows = run_grid(tiny_cfg, cells=[("drop-image", "drop-factors"), ("full", "full")])
    assert rows[0].status == "error:ValueError" and math.isnan(rows[0].auc)
    assert rows[1].status == "ok"


def test_jobs_do_not_change_results(tiny_cfg):
    cfg = tiny_cfg.replace(grid__seeds=(0, 1))
    cells = [("locf", "mean")]
    assert run_grid(cfg, cells=cells, jobs=2) == run_grid(cfg, cells=cells, jobs=1)


def test_sweep_zero_rate_identical(tiny_cfg):
    rows = run_sweep(tiny_cfg, "factor_rate", rates=(0.0,))
    assert len(rows) == 2 and rows[0].auc == rows[1].auc
    rows = run_sweep(tiny_cfg, "tp1_rate", rates=(0.0,))
    assert rows[0].auc == rows[1].auc


def test_sweep_requires_zero(tiny_cfg):
    with pytest.raises(ValueError, match="0.0"):
        run_sweep(tiny_cfg, rates=(0.2, 0.4))


def test_seed_context_corruption_rates(tiny_cfg):
    ctx = SeedContext(tiny_cfg.replace(generator__n=400), 0)
    tr = ctx.corrupt[0]
    assert abs(1 - tr.factor_masks().mean() - 0.3) < 0.03
    assert abs(1 - tr.presence()[:, 1].mean() - 0.5) < 0.1


# ------------------------------------------------------------------ report

def _sweep_rows(methods=("pbigan", "cpbigan"), rates=(0.0, 0.2, 0.4, 0.6, 0.8)):
    return [MetricsRow("drop-image", m, "MCAR", r, 0.0, s, 0.8 - 0.1 * r * (i + 1))
            for i, m in enumerate(methods) for r in rates for s in (0, 1)]


def test_report_single_row(tmp_path):
    row = MetricsRow("locf", "mean", "MCAR", 0.3, 0.5, 0, 0.75, 0.2)
    emit_report(make_config(), tmp_path, grid_rows=[row])
    lines = [ln for ln in (tmp_path / "grid.csv").read_text().splitlines() if not ln.startswith("#")]
    assert len(lines) == 2


def test_svg_structure():
    svg = sweep_svg(sweep_series(_sweep_rows()), "t", ["x"])
    polys = re.findall(r'points="([^"]+)"', svg)
    assert len(polys) == 2 and all(len(p.split()) == 5 for p in polys)


def test_report_deterministic_with_provenance(tmp_path):
    cfg = make_config()
    d1 = emit_report(cfg, tmp_path / "a", grid_rows=_sweep_rows()[:3], sweep_rows=_sweep_rows())
    d2 = emit_report(cfg, tmp_path / "b", grid_rows=_sweep_rows()[:3], sweep_rows=_sweep_rows())
    assert d1 == d2
    for name, h in d1.items():
        text = (tmp_path / "a" / name).read_text()
        assert hashlib.sha256(text.encode()).hexdigest() == h
        assert cfg.digest() in text and "mmimpute 0.1.0" in text


def test_report_roundtrip_through_csv(tmp_path):
    rows = _sweep_rows()
    emit_report(make_config(), tmp_path, sweep_rows=rows)
    assert rows_from_csv((tmp_path / "sweep.csv").read_text()) == rows


def test_report_rejects_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportError):
        emit_report(make_config(), blocker / "sub", grid_rows=_sweep_rows()[:1])
    with pytest.raises(ValueError):
        emit_report(make_config(), tmp_path / "empty")


# ------------------------------------------------------------------ CLI

@pytest.fixture
def tiny_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return str(p)


def test_cli_generate_corrupt_impute(tmp_path, tiny_file):
    assert cli.main(["generate", "--config", tiny_file, "--out", str(tmp_path / "g")]) == 0
    assert cli.main(["corrupt", "--config", tiny_file, "--in", str(tmp_path / "g"), "--out", str(tmp_path / "c")]) == 0
    assert cli.main(["corrupt", "--config", tiny_file, "--out", str(tmp_path / "c2")]) == 0
    a, b = (load_dataset(str(tmp_path / d / "train")) for d in ("c", "c2"))
    assert a == b
    assert cli.main(["impute", "--config", tiny_file, "--out", str(tmp_path / "i"),
                     "--image-imputer", "LOCF", "--factor-imputer", "mean"]) == 0
    done = load_dataset(str(tmp_path / "i" / "test"))
    assert done.factor_masks().all() and done.presence().all()


def test_cli_train_writes_checkpoint(tmp_path, tiny_file):
    assert cli.main(["train", "--config", tiny_file, "--out", str(tmp_path), "--mode", "pbigan"]) == 0
    assert (tmp_path / "factors-pbigan-seed0.bin").exists()
    assert (tmp_path / "factors-pbigan-seed0.curves.csv").exists()


def test_cli_grid_then_report_identical(tmp_path, tiny_file):
    with open(tiny_file, "a") as fh:
        fh.write("grid.rows = locf\ngrid.columns = mean, full\n")
    assert cli.main(["grid", "--config", tiny_file, "--out", str(tmp_path / "r")]) == 0
    before = (tmp_path / "r" / "grid.csv").read_bytes()
    assert cli.main(["report", "--config", tiny_file, "--in", str(tmp_path / "r"), "--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r2" / "grid.csv").read_bytes() == before


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nope.key = 1\n")
    assert cli.main(["generate", "--config", str(bad)]) == cli.EXIT_USAGE
    assert "bad.cfg:1" in capsys.readouterr().err
    assert cli.main(["report", "--out", str(tmp_path / "nothing")]) == cli.EXIT_DATA
    assert cli.main(["impute", "--image-imputer", "mice", "--out", str(tmp_path)]) == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2
