import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from funfem.basis import (BasisError, BasisSpec, CoefficientMatrix, SampledCurveSet,
                          SmoothingError, _bspline_gram, bspline_basis, eval_basis,
                          fourier_basis, gram_matrix, reconstruct, smooth_curves)
from funfem.simulation import TIME_GRID, simulate_scenario_a


def test_fourier_constant_on_unit_interval():
    np.testing.assert_allclose(eval_basis(fourier_basis(1, (0, 1)), [0.3]), [[1.0]])


def test_fourier_p3_at_origin():
    np.testing.assert_allclose(eval_basis(fourier_basis(3, (0, 1)), [0.0]),
                               [[1.0, 0.0, np.sqrt(2)]], atol=1e-15)


def test_fourier_names_and_frequencies():
    b = fourier_basis(5, (0, 2 * np.pi))
    assert b.names() == ["const", "sin1", "cos1", "sin2", "cos2"]
    np.testing.assert_allclose(b.angular_frequencies(), [0, 1, 1, 2, 2])


def test_fourier_requires_odd_p():
    with pytest.raises(BasisError):
        fourier_basis(4, (0, 1))


def test_fourier_orthonormal_by_quadrature():
    b = fourier_basis(9, (2.0, 5.0))
    t = np.linspace(2.0, 5.0, 20001)
    B = eval_basis(b, t)
    G = np.trapezoid(B[:, :, None] * B[:, None, :], t, axis=0)
    np.testing.assert_allclose(G, np.eye(9), atol=1e-6)


def test_fourier_gram_is_identity():
    W = gram_matrix(fourier_basis(41, (0, 168), period=168))
    assert np.array_equal(W, np.eye(41))


def test_bspline_partition_of_unity():
    b = bspline_basis(10, (0, 1), order=4)
    t = np.linspace(0.005, 0.995, 100)
    np.testing.assert_allclose(eval_basis(b, t).sum(axis=1), 1.0, atol=1e-12)


def test_bspline_gram_matches_dense_quadrature():
    b = bspline_basis(12, (0, 3), order=4)
    W = gram_matrix(b)
    assert np.array_equal(W, W.T)
    assert np.linalg.eigvalsh(W).min() > 0
    np.testing.assert_allclose(W, _bspline_gram(b, 10 * 2 * b.order), atol=1e-10)


def test_bspline_spec_validation():
    with pytest.raises(BasisError):
        BasisSpec("bspline", 5, (0, 1), order=4, interior_knots=(0.5, 0.6))
    with pytest.raises(BasisError):
        BasisSpec("bspline", 5, (0, 1), order=4, interior_knots=(1.0,))
    with pytest.raises(BasisError):
        BasisSpec("wavelet", 5, (0, 1))


def test_out_of_domain_rejected():
    with pytest.raises(BasisError):
        eval_basis(fourier_basis(3, (0, 1)), [1.5])


def test_basis_spec_round_trip():
    for b in (fourier_basis(7, (0, 10), period=5), bspline_basis(8, (1, 2), order=3)):
        assert BasisSpec.from_dict(b.to_dict()) == b


def test_curve_set_validation():
    with pytest.raises(ValueError):
        SampledCurveSet([[0, 0]], [[1, 2]])
    with pytest.raises(ValueError):
        SampledCurveSet([[0, 1]], [[1, np.nan]])
    with pytest.raises(ValueError):
        SampledCurveSet([[]], [[]])


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["fourier", "bspline"]), st.integers(0, 10_000))
def test_in_span_round_trip(kind, seed):
    rng = np.random.default_rng(seed)
    basis = fourier_basis(7, (0, 4)) if kind == "fourier" else bspline_basis(7, (0, 4))
    c = rng.normal(size=7)
    t = np.sort(rng.uniform(0, 4, 3 * 7))
    obs = SampledCurveSet([t], [eval_basis(basis, t) @ c])
    coeffs = smooth_curves(obs, basis, center=False)
    np.testing.assert_allclose(coeffs.gamma[0], c, atol=1e-8)
    np.testing.assert_allclose(reconstruct(coeffs, t)[0], obs.values[0], atol=1e-8)


def test_identical_curves_center_to_zero():
    basis = fourier_basis(5, (0, 1))
    t = np.linspace(0, 1, 20)
    v = np.sin(2 * np.pi * t) + 0.3
    coeffs = smooth_curves(SampledCurveSet.from_grid(t, [v, v]), basis, center=True)
    assert np.all(coeffs.gamma == 0)
    np.testing.assert_allclose(reconstruct(coeffs, t), [v, v], atol=1e-10)


def test_centering_preserves_reconstruction():
    data = simulate_scenario_a(20, seed=3)
    basis = fourier_basis(25, (1, 21))
    raw = smooth_curves(data.curves, basis, center=False)
    cen = raw.center()
    np.testing.assert_allclose(cen.gamma.mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(reconstruct(cen, TIME_GRID), reconstruct(raw, TIME_GRID),
                               atol=1e-10)


def test_least_squares_optimality():
    rng = np.random.default_rng(0)
    basis = bspline_basis(8, (0, 1))
    t = np.sort(rng.uniform(0, 1, 40))
    y = np.cos(5 * t) + rng.normal(0, 0.1, t.size)
    g = smooth_curves(SampledCurveSet([t], [y]), basis, center=False).gamma[0]
    B = eval_basis(basis, t)
    rss = np.sum((y - B @ g) ** 2)
    for j in range(8):
        for delta in (1e-3, -1e-3):
            h = g.copy()
            h[j] += delta
            assert np.sum((y - B @ h) ** 2) >= rss


def test_scenario_a_residuals_below_noise_scale():
    data = simulate_scenario_a(30, seed=1)
    basis = fourier_basis(25, (1, 21))
    rec = reconstruct(smooth_curves(data.curves, basis), TIME_GRID)
    rms = np.sqrt(np.mean((rec - data.values()) ** 2, axis=1))
    assert np.all(rms < 1.0)


def test_scenario_a_cluster1_mean_peaks_near_7():
    data = simulate_scenario_a(400, seed=2)
    basis = fourier_basis(25, (1, 21))
    coeffs = smooth_curves(data.curves, basis)
    t = np.linspace(1, 21, 401)
    curve = reconstruct(coeffs, t)[data.labels == 0].mean(axis=0)
    assert abs(t[np.argmax(curve)] - 7.0) < 0.5


def test_too_few_samples_and_rank_deficiency():
    basis = fourier_basis(5, (0, 1))
    with pytest.raises(SmoothingError):
        smooth_curves(SampledCurveSet([[0.1, 0.2, 0.3]], [[1, 2, 3]]), basis)
    # Five samples at integer multiples of the period make every harmonic constant.
    b2 = fourier_basis(5, (0, 4), period=1)
    with pytest.raises(SmoothingError) as err:
        smooth_curves(SampledCurveSet([[0, 1, 2, 3, 4]], [[1, 2, 3, 4, 5]]), b2)
    assert err.value.curve_index == 0


def test_irregular_grids_handled_per_curve():
    basis = fourier_basis(5, (0, 1))
    t1 = np.linspace(0, 1, 15)
    t2 = np.sort(np.random.default_rng(1).uniform(0, 1, 23))
    f = lambda t: 1 + np.sin(2 * np.pi * t)
    coeffs = smooth_curves(SampledCurveSet([t1, t2], [f(t1), f(t2)]), basis, center=False)
    np.testing.assert_allclose(coeffs.gamma[0], coeffs.gamma[1], atol=1e-10)


def test_coefficient_matrix_shape_check():
    with pytest.raises(ValueError):
        CoefficientMatrix(np.zeros((2, 3)), fourier_basis(5, (0, 1)))
