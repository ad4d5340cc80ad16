import numpy as np
import pytest
from scipy import stats

from mmimpute.missing import (MechanismSpec, calibrate_intercept, corrupt_dataset, drop_tp1,
                              inhouse_mnar, mar_mask, mcar_mask, mnar_mask, sample_fake_mask)


def _values(n=10_000, f=14, seed=0):
    return np.random.default_rng(seed).random((n, f))


def test_mcar_extremes():
    assert mcar_mask((50, 14), 0.0, 1).all()
    assert not mcar_mask((50, 14), 1.0, 1).any()


def test_mcar_rate_binomial():
    m = mcar_mask((10_000,), 0.3, 7)
    assert abs(m.mean() - 0.70) <= 0.01


def test_mcar_deterministic():
    np.testing.assert_array_equal(mcar_mask((30, 14), 0.3, 5), mcar_mask((30, 14), 0.3, 5))
    assert not np.array_equal(mcar_mask((30, 14), 0.3, 5), mcar_mask((30, 14), 0.3, 6))


def test_mcar_no_position_effect():
    m = mcar_mask((10_000, 14), 0.3, 9)
    counts = np.stack([(1 - m).sum(axis=0), m.sum(axis=0)])
    assert stats.chi2_contingency(counts)[1] > 0.01


def test_calibrated_intercept_hits_rate():
    z = 3.0 * _values(5000, 1).ravel()
    b = calibrate_intercept(z, 0.3)
    from scipy.special import expit
    assert abs(expit(z + b).mean() - 0.3) < 1e-3


@pytest.mark.parametrize("kind", ["MAR", "MNAR"])
def test_logistic_rate_calibration(kind):
    spec = MechanismSpec(kind, 0.3, driver_index=0 if kind == "MAR" else None, slope=2.0, seed=1)
    x = _values()
    m = mar_mask(x, spec) if kind == "MAR" else mnar_mask(x, spec)
    cols = slice(1, None) if kind == "MAR" else slice(None)
    assert abs((1 - m[:, cols]).mean() - 0.3) <= 0.01


def test_mar_driver_never_masked_and_correlated():
    x = _values()
    m = mar_mask(x, MechanismSpec("MAR", 0.3, driver_index=0, slope=2.0, seed=2))
    assert m[:, 0].all()
    r = np.corrcoef(x[:, 0], 1 - m[:, 1:].mean(axis=1))[0, 1]
    assert r > 0


def test_mar_slope_zero_like_mcar():
    x = _values()
    m = mar_mask(x, MechanismSpec("MAR", 0.3, driver_index=0, slope=0.0, seed=3))
    miss = 1 - m[:, 1:].mean(axis=1)
    assert abs(np.corrcoef(x[:, 0], miss)[0, 1]) < 0.03
    assert abs(miss.mean() - 0.3) < 0.01


def test_mar_driver_out_of_range():
    with pytest.raises(ValueError):
        mar_mask(_values(10), MechanismSpec("MAR", 0.3, driver_index=14))


def test_mnar_masked_values_higher():
    x = _values()
    m = mnar_mask(x, MechanismSpec("MNAR", 0.3, slope=2.0, seed=4))
    assert x[m == 0].mean() > x[m == 1].mean()


def test_mnar_sign_test_per_column():
    x = _values()
    m = mnar_mask(x, MechanismSpec("MNAR", 0.3, slope=2.0, seed=5))
    wins = sum(x[m[:, j] == 0, j].mean() > x[m[:, j] == 1, j].mean() for j in range(14))
    assert stats.binomtest(int(wins), 14, 0.5, alternative="greater").pvalue < 0.01


def test_inhouse_preset_targets_report_factors():
    x = _values()
    m = mnar_mask(x, inhouse_mnar(0.3, seed=1))
    assert (1 - m[:, 11:]).mean() > (1 - m[:, :11]).mean()


def test_spec_validation():
    with pytest.raises(ValueError):
        MechanismSpec("MAR", 0.3)
    with pytest.raises(ValueError):
        MechanismSpec("MCAR", 1.5)
    with pytest.raises(ValueError):
        MechanismSpec("XYZ", 0.1)


def test_drop_tp1_extremes(tiny):
    r = tiny[0][0]
    assert drop_tp1(0.0, 1, r) is r
    out = drop_tp1(1.0, 1, r)
    assert not out.images.tp1_present and out.factors == r.factors


def test_drop_tp1_rate(small):
    d = corrupt_dataset(small[0], None, tp1_rate=0.5, seed=3)
    assert 0.4 < 1 - d.presence()[:, 1].mean() < 0.6
    r = small[0][0]
    clones = (type(r)(f"x{i}", r.factors, r.images, r.label) for i in range(10_000))
    flags = [drop_tp1(0.5, 8, c).images.tp1_present for c in clones]
    assert abs(1 - np.mean(flags) - 0.5) <= 0.01


def test_fake_mask_mcar_matches_mcar():
    spec = MechanismSpec("MCAR", 0.3)
    np.testing.assert_array_equal(sample_fake_mask(spec, (20, 14), 3), mcar_mask((20, 14), 0.3, 3))
    assert sample_fake_mask(MechanismSpec("MCAR", 0.0), (5, 14), 1).all()
    assert not sample_fake_mask(MechanismSpec("MCAR", 1.0), (5, 14), 1).any()


def test_fake_mask_pool_rows():
    pool = mcar_mask((50, 14), 0.5, 2)
    out = sample_fake_mask(MechanismSpec("MNAR", 0.5, slope=1.0), (30, 14), 4, pool=pool)
    rows = {r.tobytes() for r in pool}
    assert all(r.tobytes() in rows for r in out)
    with pytest.raises(ValueError):
        sample_fake_mask(MechanismSpec("MNAR", 0.5), (3, 14), 4)


def test_corrupt_zero_fills_and_keeps_observed(small):
    d = corrupt_dataset(small[0], MechanismSpec("MCAR", 0.3), tp1_rate=0.5, seed=1)
    m = d.factor_masks().astype(bool)
    np.testing.assert_array_equal(d.factor_values()[m], small[0].factor_values()[m])
    assert (d.factor_values()[~m] == 0).all()
    assert (d.tp1()[d.presence()[:, 1] == 0] == 0).all()
