import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import bundled_config, clean_config
from magloc.calibration import (
    FUSED_AXIS,
    AxisCalibration,
    CalibrationSample,
    CalibrationSet,
    calibrate_dataset,
    factory_calibration,
    fit_axis,
    local_recalibration,
    magnitude_to_distance,
)
from magloc.errors import DomainError, InsufficientDataError, SchemaError
from magloc.evaluation import split_dataset
from magloc.pipeline import range_pairs, scenario_factory_calibration, simulate
from magloc.scenario import build_scenario

pos = st.floats(0.05, 50.0)


@pytest.fixture(scope="module")
def office():
    sc = build_scenario(bundled_config("office"), "office")
    return sc, simulate(sc)


@pytest.fixture(scope="module")
def clean_reference():
    sc = build_scenario(clean_config("reference_office"), "clean-reference")
    return sc, simulate(sc)


class TestFitAxis:
    def test_round_trip(self):
        d = np.linspace(0.5, 8.0, 40)
        m = d**3 / 2.0  # d = (a m)^(1/b) with a=2, b=3
        cal = fit_axis((m, d))
        assert cal.a == pytest.approx(2.0, rel=1e-6)
        assert cal.b == pytest.approx(3.0, rel=1e-6)
        assert cal.sign == 1

    def test_inverse_cube(self):
        d = np.geomspace(0.5, 8.0, 40)
        cal = fit_axis((7e-4 / d**3, d))
        assert cal.b == pytest.approx(3.0, abs=1e-6)
        assert cal.sign == -1
        assert np.allclose(magnitude_to_distance(cal, 7e-4 / d**3), d, rtol=1e-9)

    def test_two_samples_exact(self):
        cal = fit_axis([CalibrationSample(1e-3, 1.0), CalibrationSample(1e-6, 10.0)])
        assert cal.residual_rms == pytest.approx(0.0, abs=1e-12)
        assert cal.n_samples == 2

    def test_too_few(self):
        with pytest.raises(InsufficientDataError):
            fit_axis(([1e-3, 1e-3], [1.0, 2.0]))

    def test_non_positive(self):
        with pytest.raises(DomainError):
            fit_axis(([1e-3, 0.0], [1.0, 2.0]))

    @given(st.floats(1e-3, 1e3), st.floats(0.5, 5.0), st.floats(1e-3, 1e3))
    def test_scale_equivariance(self, a, b, k):
        d = np.geomspace(0.5, 8.0, 12)
        m = d ** (-b) / a
        c1, c2 = fit_axis((m, d)), fit_axis((k * m, d))
        assert c2.b == pytest.approx(c1.b, rel=1e-6)
        assert np.allclose(magnitude_to_distance(c2, k * m), magnitude_to_distance(c1, m), rtol=1e-6)


class TestMagnitudeToDistance:
    def test_examples(self):
        assert magnitude_to_distance(AxisCalibration(1.0, 1.0), 0.5) == pytest.approx(0.5)
        assert magnitude_to_distance(AxisCalibration(2.0, 3.0), 4.0) == pytest.approx(2.0)

    @given(pos, pos)
    def test_monotone(self, m1, m2):
        cal = AxisCalibration(2.0, 3.0)
        lo, hi = sorted((m1, m2))
        assert magnitude_to_distance(cal, lo) <= magnitude_to_distance(cal, hi)

    def test_rejects_non_positive(self):
        with pytest.raises(DomainError):
            magnitude_to_distance(AxisCalibration(1.0, 3.0), 0.0)

    @pytest.mark.parametrize("kwargs", [dict(a=0.0, b=1.0), dict(a=1.0, b=-1.0), dict(a=1.0, b=1.0, sign=0)])
    def test_invariants(self, kwargs):
        with pytest.raises(DomainError):
            AxisCalibration(**kwargs)


class TestDatasetCalibration:
    def test_full_fraction_matches_global(self, office):
        _, ds = office
        full = calibrate_dataset(ds)
        local = local_recalibration(ds, 1.0, seed=4)
        assert full.keys() == local.keys()
        for k in full:
            assert local[k].a == pytest.approx(full[k].a, rel=1e-6)
            assert local[k].b == pytest.approx(full[k].b, rel=1e-6)

    def test_fused_axis_present(self, office):
        cals = calibrate_dataset(office[1])
        assert all((t, FUSED_AXIS) in cals for t in range(7))

    def test_deterministic(self, office):
        a = local_recalibration(office[1], 0.1, seed=3)
        b = local_recalibration(office[1], 0.1, seed=3)
        assert a == b

    def test_recalibration_beats_factory_on_held_out(self, office):
        sc, ds = office
        recal_idx, rest = split_dataset(ds, [0.1, 0.9], seed=5)[:2]
        factory = scenario_factory_calibration(sc, 5)
        local = calibrate_dataset(ds, recal_idx)

        def rmse(cals):
            p = np.asarray(range_pairs(ds, rest, cals, FUSED_AXIS))
            return np.sqrt(np.mean((p[:, 1] - p[:, 0]) ** 2))

        assert rmse(local) < rmse(factory)

    def test_noiseless_factory_fits_free_space(self, clean_reference):
        sc, ds = clean_reference
        cals = factory_calibration(sc.env, seed=1, n_per_transmitter=100)
        p = np.asarray(range_pairs(ds, range(len(ds)), cals, FUSED_AXIS))
        p = p[p[:, 0] <= 8.0]  # the factory recording spans 0.5-8 m
        assert np.max(np.abs(p[:, 1] / p[:, 0] - 1)) < 0.01

    def test_bad_fraction(self, office):
        with pytest.raises(DomainError):
            local_recalibration(office[1], 0.0, seed=1)


class TestCalibrationSet:
    def test_save_load(self, tmp_path):
        cals = CalibrationSet({(0, 1): AxisCalibration(2.0, 3.0, 0, 1, -1, 0.1, 10),
                               (1, FUSED_AXIS): AxisCalibration(1.5, 2.9, 1, FUSED_AXIS)})
        p = tmp_path / "cal.json"
        cals.save(p, {"seed": 1})
        assert CalibrationSet.load(p) == cals

    def test_wrong_format(self):
        with pytest.raises(SchemaError):
            CalibrationSet.from_dict({"format": "other"})
        with pytest.raises(SchemaError):
            CalibrationSet.from_dict({"format": "magloc-calibration/1", "calibrations": [{"a": 1}]})
