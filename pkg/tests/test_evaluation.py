import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magloc.errors import DomainError, SchemaError
from magloc.evaluation import (
    DEFAULT_BANDS,
    ERROR_MAP_COLUMNS,
    ErrorMapRecord,
    boxplot_stats,
    export_error_map,
    export_estimates,
    median_position_error,
    read_error_map,
    read_estimates,
    rmse_by_interval,
    split_dataset,
)

pairs = st.lists(st.tuples(st.floats(0.0, 10.0), st.floats(0.0, 12.0)), min_size=0, max_size=60)


class TestRmseByInterval:
    def test_hand_example(self):
        rep = rmse_by_interval([(1.0, 1.1), (2.0, 2.2), (2.5, 2.8)])
        assert rep.rmse[0] == pytest.approx(np.sqrt(0.14 / 3), rel=1e-12)
        assert rep.rmse[0] == pytest.approx(0.2160, abs=1e-4)
        assert rep.counts == [3, 0, 0]

    def test_exact_estimates(self):
        rep = rmse_by_interval([(d, d) for d in (0.5, 3.5, 6.0)])
        assert rep.rmse == [0.0, 0.0, 0.0]

    def test_default_bands(self):
        assert DEFAULT_BANDS == ((0.0, 3.0), (3.0, 5.0), (5.0, 8.0))

    def test_absent_band(self):
        rep = rmse_by_interval([(1.0, 1.2)])
        assert rep.rmse[1] is None and rep.rmse[2] is None
        assert rep.present() == [((0.0, 3.0), pytest.approx(0.2))]

    def test_half_open(self):
        rep = rmse_by_interval([(3.0, 3.5), (8.0, 1.0)])
        assert rep.counts == [0, 1, 0]

    @pytest.mark.parametrize("bands", [[(1, 1)], [(0, 3), (2, 5)], [(3, 5), (0, 3)]])
    def test_invalid_bands(self, bands):
        with pytest.raises(DomainError):
            rmse_by_interval([], bands)

    @given(pairs)
    def test_matches_brute_force(self, samples):
        rep = rmse_by_interval(samples)
        for (lo, hi), got in zip(rep.bands, rep.rmse):
            errs = [e - t for t, e in samples if lo <= t < hi]
            if not errs:
                assert got is None
            else:
                want = (sum(x * x for x in errs) / len(errs)) ** 0.5
                assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


class TestMedian:
    def test_examples(self):
        z = np.zeros((3, 3))
        assert median_position_error(np.array([[1, 0, 0], [2, 0, 0], [9, 0, 0]]), z) == 2.0
        assert median_position_error(np.array([[1.0, 0, 0], [3, 0, 0]]), z[:2]) == 2.0

    def test_empty(self):
        with pytest.raises(DomainError):
            median_position_error(np.zeros((0, 3)), np.zeros((0, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            median_position_error(np.zeros((2, 3)), np.zeros((3, 3)))

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=30), st.randoms())
    def test_permutation_invariant(self, errs, rnd):
        est = np.column_stack([errs, np.zeros(len(errs)), np.zeros(len(errs))])
        shuffled = list(est)
        rnd.shuffle(shuffled)
        z = np.zeros_like(est)
        assert median_position_error(est, z) == median_position_error(np.array(shuffled), z)

    def test_boxplot(self):
        assert boxplot_stats([]) is None
        assert boxplot_stats([1.0, 2.0, 3.0, 4.0, 5.0]) == (1.0, 2.0, 3.0, 4.0, 5.0)


class TestErrorMap:
    def test_empty_is_header_only(self, tmp_path):
        p = tmp_path / "map.csv"
        export_error_map([], p)
        assert p.read_text() == ",".join(ERROR_MAP_COLUMNS) + "\n"
        assert read_error_map(p) == []

    def test_round_trip_and_speed(self, tmp_path, rng):
        recs = [ErrorMapRecord(tuple(rng.uniform(0, 10, 3)), float(rng.random()), "model") for _ in range(300)]
        p = tmp_path / "map.csv"
        t0 = time.perf_counter()
        export_error_map(recs, p, {"seed": 3})
        assert time.perf_counter() - t0 < 1.0
        assert read_error_map(p) == recs

    def test_negative_error(self):
        with pytest.raises(DomainError):
            ErrorMapRecord((0.0, 0.0, 0.0), -1.0, "model")

    def test_wrong_columns(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(SchemaError):
            read_error_map(p)

    def test_estimates_round_trip(self, tmp_path):
        rows = [(0, np.array([1.0, 2.0, 1.0]), np.array([1.1, 2.0, 1.0]), 0.01, "model"),
                (5, None, np.array([3.0, 4.0, 1.0]), 0.0, "fingerprint")]
        p = tmp_path / "est.csv"
        export_estimates(rows, p, {"seed": 9})
        meta, back = read_estimates(p)
        assert meta == {"seed": "9"}
        assert back[1][1] is None and back[1][4] == "fingerprint"
        assert np.array_equal(back[0][2], rows[0][2])


class TestSplit:
    def test_ten_and_thirty_percent(self):
        parts = split_dataset(300, [0.1, 0.3], seed=1)
        assert [len(p) for p in parts] == [30, 90, 180]

    def test_full_fraction(self):
        parts = split_dataset(50, [1.0], seed=1)
        assert len(parts[0]) == 50 and len(parts[1]) == 0

    def test_deterministic(self):
        a = split_dataset(100, [0.2, 0.3], seed=5)
        b = split_dataset(100, [0.2, 0.3], seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    @pytest.mark.parametrize("fr", [[-0.1], [1.2], [0.6, 0.6]])
    def test_invalid(self, fr):
        with pytest.raises(DomainError):
            split_dataset(10, fr, seed=0)

    @given(st.integers(0, 500), st.lists(st.floats(0, 0.3), max_size=3), st.integers(0, 2**31))
    def test_disjoint_cover(self, n, fr, seed):
        parts = split_dataset(n, fr, seed)
        joined = np.concatenate(parts)
        assert len(joined) == n and set(joined.tolist()) == set(range(n))
