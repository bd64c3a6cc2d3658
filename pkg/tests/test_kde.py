import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topobw.grid import (GridSpec, ScalarField, build_grid_spec, read_field, read_points_csv,
                         unit_normalize, write_field, write_points_csv)
from topobw.kde import kde_at_cells, kde_dh, kde_evaluate, kde_score_samples

INV_SQRT_2PI = 1 / np.sqrt(2 * np.pi)


def brute_kde(X, centers, h):
    d = X.shape[1]
    sq = ((centers[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    return np.exp(-0.5 * sq / h ** 2).sum(1) / (X.shape[0] * h ** d * (2 * np.pi) ** (d / 2))


class TestGridSpec:
    def test_padded_bounds(self):
        spec = build_grid_spec([[0.0], [1.0]], [10], 0.1)
        assert spec.lower == pytest.approx((-0.1,))
        assert spec.upper == pytest.approx((1.1,))

    def test_zero_range_uses_unit_range(self):
        spec = build_grid_spec([[5.0], [5.0]], [10], 0.1)
        assert spec.lower == pytest.approx((4.9,))
        assert spec.upper == pytest.approx((5.1,))

    def test_2d_bounds(self):
        X = np.array([[-1.0, -2.0], [1.0, 2.0], [0.0, 0.0]])
        spec = build_grid_spec(X, 8, 0.1)
        assert spec.lower == pytest.approx((-1.2, -2.4))
        assert spec.upper == pytest.approx((1.2, 2.4))
        assert spec.resolution == (8, 8)

    @pytest.mark.parametrize("bad", [np.empty((0, 1)), [[np.nan]], [[np.inf], [1.0]]])
    def test_rejects_bad_points(self, bad):
        with pytest.raises(ValueError):
            build_grid_spec(bad, 10)

    def test_rejects_bad_resolution_and_padding(self):
        with pytest.raises(ValueError):
            build_grid_spec([[0.0], [1.0]], [1])
        with pytest.raises(ValueError):
            build_grid_spec([[0.0], [1.0]], [4], -0.1)

    def test_row_major_indexing(self):
        spec = GridSpec((0, 0), (2, 3), (2, 3))
        c = spec.cell_centers()
        assert c[1].tolist() == [0.5, 1.5]
        assert c[3].tolist() == [1.5, 0.5]
        assert spec.n_cells == 6

    def test_field_binary_round_trip(self, tmp_path):
        spec = GridSpec((-1, 0), (1, 2), (3, 4))
        fld = ScalarField(spec, np.arange(12.0))
        path = tmp_path / "f.bin"
        write_field(fld, path)
        data = path.read_bytes()
        assert struct.unpack_from("<Q", data, 0) == (2,)
        assert struct.unpack_from("<2Q", data, 8) == (3, 4)
        back = read_field(path)
        assert back.spec == spec
        np.testing.assert_array_equal(back.values, fld.values)

    def test_points_csv_round_trip(self, tmp_path):
        X = np.random.default_rng(0).normal(size=(5, 3))
        write_points_csv(X, tmp_path / "p.csv")
        np.testing.assert_array_equal(read_points_csv(tmp_path / "p.csv", dim=3), X)


class TestKDE:
    def test_single_point_peak(self):
        spec = GridSpec((-0.5,), (0.5,), (1,))
        f = kde_evaluate([[0.0]], spec, 1.0)
        assert f.values[0] == pytest.approx(INV_SQRT_2PI, rel=1e-12)

    def test_symmetric_pair(self):
        spec = GridSpec((-3,), (3,), (60,))
        f = kde_evaluate([[-1.0], [1.0]], spec, 0.4).values
        np.testing.assert_allclose(f, f[::-1], rtol=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 2))
        spec = build_grid_spec(X, (7, 9))
        f = kde_evaluate(X, spec, 0.37).flat
        np.testing.assert_allclose(f, brute_kde(X, spec.cell_centers(), 0.37), rtol=1e-12)

    def test_fft_matches_direct_2d(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(500, 2))
        spec = build_grid_spec(X, 64)
        a = kde_evaluate(X, spec, 0.3, "direct").values
        b = kde_evaluate(X, spec, 0.3, "fft_binned").values
        # Error relative to the field maximum; far-tail values are ~1e-11.
        assert np.max(np.abs(a - b)) / a.max() < 1e-3

    def test_riemann_sum_near_one(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(200, 2))
        h = 0.3
        lo, hi = X.min(0) - 5 * h, X.max(0) + 5 * h
        spec = GridSpec(tuple(lo), tuple(hi), (120, 120))
        total = kde_evaluate(X, spec, h).values.sum() * spec.cell_volume
        assert abs(total - 1) < 0.02

    def test_positive_and_finite(self):
        X = np.array([[0.0], [0.1]])
        spec = GridSpec((-1,), (1,), (50,))
        for h in (1e-3, 0.1, 100.0):
            f = kde_evaluate(X, spec, h).values
            assert np.all(np.isfinite(f)) and np.all(f >= 0)

    @pytest.mark.parametrize("h", [0.0, -1.0, np.inf, np.nan])
    def test_rejects_bad_bandwidth(self, h):
        with pytest.raises(ValueError):
            kde_evaluate([[0.0]], GridSpec((-1,), (1,), (4,)), h)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kde_evaluate(np.zeros((3, 2)), GridSpec((-1,), (1,), (4,)), 0.5)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(40, 2))
        spec = build_grid_spec(X, 16)
        shift = np.array([3.25, -1.5])
        a = kde_evaluate(X, spec, 0.5).values
        b = kde_evaluate(X + shift, spec.translated(shift), 0.5).values
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * a.max())

    def test_score_samples_matches_grid(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 2))
        spec = build_grid_spec(X, 5)
        f = kde_evaluate(X, spec, 0.6).flat
        np.testing.assert_allclose(np.exp(kde_score_samples(X, spec.cell_centers(), 0.6)), f,
                                   rtol=1e-10)


class TestKDEDerivative:
    def test_at_data_point(self):
        spec = GridSpec((-0.5,), (0.5,), (1,))
        h = 0.7
        assert kde_dh([[0.0]], spec, h).values[0] == pytest.approx(-INV_SQRT_2PI / h ** 2)

    def test_zero_at_distance_h(self):
        h = 0.5
        spec = GridSpec((h - 0.05,), (h + 0.05,), (1,))
        assert abs(kde_dh([[0.0]], spec, h).values[0]) < 1e-15

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), d=st.integers(1, 3), h=st.floats(0.05, 2.0))
    def test_matches_finite_difference(self, seed, d, h):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(20, d))
        spec = build_grid_spec(X, 6 if d < 3 else 4)
        eps = 1e-5 * h
        fd = (kde_evaluate(X, spec, h + eps).values - kde_evaluate(X, spec, h - eps).values)
        fd /= 2 * eps
        an = kde_dh(X, spec, h).values
        scale = np.abs(an).max()
        assert np.max(np.abs(fd - an)) / scale < 1e-5

    def test_fft_derivative_close_to_direct(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(500, 3))
        spec = build_grid_spec(X, 32)
        a = kde_dh(X, spec, 0.4, "direct").values
        b = kde_dh(X, spec, 0.4, "fft_binned").values
        assert np.max(np.abs(a - b)) / np.abs(a).max() < 5e-3

    def test_kde_at_cells_matches_fields(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(25, 2))
        spec = build_grid_spec(X, 10)
        cells = np.array([0, 17, 55, 99])
        f, df = kde_at_cells(X, spec, 0.4, cells)
        np.testing.assert_allclose(f, kde_evaluate(X, spec, 0.4).flat[cells], rtol=1e-12)
        np.testing.assert_allclose(df, kde_dh(X, spec, 0.4).flat[cells], rtol=1e-10)


class TestUnitNormalize:
    def test_scaling(self):
        nf = unit_normalize(ScalarField(GridSpec((0,), (3,), (3,)), [0.2, 0.5, 0.4]))
        np.testing.assert_allclose(nf.values, [0.4, 1.0, 0.8])
        assert nf.max_raw == 0.5 and nf.argmax_cell == 1

    def test_tie_goes_to_lowest_index(self):
        nf = unit_normalize(ScalarField(GridSpec((0,), (2,), (2,)), [3.0, 3.0]))
        np.testing.assert_array_equal(nf.values, [1.0, 1.0])
        assert nf.argmax_cell == 0

    def test_rejects_non_positive_max(self):
        with pytest.raises(ValueError):
            unit_normalize(ScalarField(GridSpec((0,), (2,), (2,)), [0.0, 0.0]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(1e-6, 1e6), min_size=2, max_size=30))
    def test_idempotent_and_reconstructs(self, vals):
        fld = ScalarField(GridSpec((0,), (1,), (len(vals),)), vals)
        nf = unit_normalize(fld)
        assert nf.values.max() == 1.0 and nf.values.min() >= 0
        again = unit_normalize(nf.field)
        np.testing.assert_array_equal(again.values, nf.values)
        np.testing.assert_allclose(nf.values * nf.max_raw, fld.values, rtol=1e-12)
