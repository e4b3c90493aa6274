import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from funfem.dfm import (ALL_MODELS, BETA_STRUCTURES, SIGMA_STRUCTURES, DegenerateModelError,
                        DfmModelSpec, DfmParams, cluster_log_densities, constrain_covariance,
                        free_parameter_count, param_count)
from oracles import dense_log_densities, enumerate_variance_parameters


def random_params(rng, K, p, d):
    U = np.linalg.qr(rng.normal(size=(p, d)))[0]
    A = rng.normal(size=(K, d, d))
    sigma = A @ np.swapaxes(A, 1, 2) + 0.1 * np.eye(d)
    pi = rng.dirichlet(np.ones(K))
    return DfmParams(pi, rng.normal(size=(K, p)), sigma, rng.uniform(0.2, 2.0, K), U)


def test_twelve_models():
    assert len(ALL_MODELS) == 12
    assert len({m.name for m in ALL_MODELS}) == 12
    assert {(m.sigma_structure, m.beta_structure) for m in ALL_MODELS} == {
        (s, b) for s in SIGMA_STRUCTURES for b in BETA_STRUCTURES}


@pytest.mark.parametrize("model", ALL_MODELS, ids=lambda m: m.name)
def test_name_round_trip(model):
    assert DfmModelSpec.from_name(model.name) == model
    assert DfmModelSpec.from_name(model.name[3:]) == model


def test_name_parsing_errors():
    for bad in ("DFM[Sigma_k]", "DFM[gamma,beta]", "nonsense"):
        with pytest.raises(ValueError):
            DfmModelSpec.from_name(bad)


def test_table_counts():
    # DFM[Sigma,beta], K=4, p=25: 3*23 + 6 + 1
    assert param_count(DfmModelSpec("common_full", "common"), 4, 25) == 76
    # DFM[alpha,beta], K=2, p=10: 1*9 + 2
    assert param_count(DfmModelSpec("common_spherical", "common"), 2, 10) == 11


def test_table_formulas():
    # Table rows written with d = K - 1; alpha_k beta_k uses the corrected row.
    K, p = 5, 30
    base = (K - 1) * (p - K / 2)
    expected = {
        ("full", "per_cluster"): base + K * (K - 1) * K / 2 + K,
        ("full", "common"): base + K * (K - 1) * K / 2 + 1,
        ("common_full", "per_cluster"): base + K * (K - 1) / 2 + K,
        ("common_full", "common"): base + K * (K - 1) / 2 + 1,
        ("diagonal", "per_cluster"): base + K * (K - 1) + K,
        ("diagonal", "common"): base + K * (K - 1) + 1,
        ("spherical", "per_cluster"): base + 2 * K,
        ("spherical", "common"): base + K + 1,
        ("common_diagonal", "per_cluster"): base + (K - 1) + K,
        ("common_diagonal", "common"): base + K,
        ("common_spherical", "per_cluster"): base + K + 1,
        ("common_spherical", "common"): base + 2,
    }
    for (s, b), value in expected.items():
        assert param_count(DfmModelSpec(s, b), K, p) == value


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(ALL_MODELS), st.integers(2, 6), st.integers(7, 30))
def test_param_count_matches_enumeration(model, K, p):
    rng = np.random.default_rng(K * 100 + p)
    assert param_count(model, K, p) == enumerate_variance_parameters(
        model.sigma_structure, model.beta_structure, K, p, rng)


@pytest.mark.parametrize("model", ALL_MODELS, ids=lambda m: m.name)
def test_param_count_affine_increasing_in_p(model):
    for K in range(2, 7):
        counts = [param_count(model, K, p) for p in range(K + 1, 40)]
        steps = np.diff(counts)
        assert np.all(steps == K - 1)


def test_free_parameter_count_adds_means_and_proportions():
    m = DfmModelSpec()
    assert free_parameter_count(m, 4, 25) == param_count(m, 4, 25) + 3 + 4 * 3


def test_param_count_rejects_bad_dims():
    with pytest.raises(ValueError):
        param_count(DfmModelSpec(), 1, 10)
    with pytest.raises(ValueError):
        param_count(DfmModelSpec(), 5, 4)


def test_standard_normal_at_origin():
    p, d = 6, 2
    params = DfmParams([1.0], np.zeros((1, p)), np.eye(d)[None], [1.0], np.eye(p)[:, :d])
    out = cluster_log_densities(np.zeros(p), params)
    np.testing.assert_allclose(out, [-p / 2 * np.log(2 * np.pi)], rtol=1e-14)


def test_beta_scaling_changes_only_complement_term():
    rng = np.random.default_rng(4)
    params = random_params(rng, 1, 5, 2)
    g = rng.normal(size=5)
    doubled = DfmParams(params.pi, params.means, params.sigma, 2 * params.beta, params.U)
    c = g - params.means[0]
    res2 = np.sum((c - params.U @ (params.U.T @ c)) ** 2)
    b = params.beta[0]
    expected = -0.5 * (res2 * (1 / (2 * b) - 1 / b) + 3 * np.log(2))
    diff = cluster_log_densities(g, doubled) - cluster_log_densities(g, params)
    np.testing.assert_allclose(diff, [expected], rtol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(1, 4))
def test_log_density_matches_dense_oracle(seed, p, K):
    rng = np.random.default_rng(seed)
    d = max(1, min(K - 1, p - 1))
    params = random_params(rng, K, p, d)
    g = rng.normal(size=(7, p))
    np.testing.assert_allclose(cluster_log_densities(g, params),
                               dense_log_densities(g, params), rtol=0, atol=1e-8)


def test_density_integrates_to_pi():
    rng = np.random.default_rng(0)
    params = random_params(rng, 2, 2, 1)
    ax = np.linspace(-15, 15, 601)
    X, Y = np.meshgrid(ax, ax)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    dens = np.exp(cluster_log_densities(pts, params))
    mass = dens.sum(axis=0) * (ax[1] - ax[0]) ** 2
    np.testing.assert_allclose(mass, params.pi, rtol=0.01)


def test_params_validation():
    U = np.eye(4)[:, :1]
    with pytest.raises(ValueError):
        DfmParams([0.6, 0.6], np.zeros((2, 4)), np.ones((2, 1, 1)), [1, 1], U)
    with pytest.raises(DegenerateModelError):
        DfmParams([0.5, 0.5], np.zeros((2, 4)), np.ones((2, 1, 1)), [1, 0], U)
    with pytest.raises(ValueError):
        DfmParams([1.0], np.zeros((1, 4)), np.ones((1, 1, 1)), [1], 2 * U)


def test_non_pd_sigma_is_rejected():
    U = np.eye(3)[:, :2]
    params = DfmParams([1.0], np.zeros((1, 3)), np.diag([1.0, -1.0])[None], [1.0], U)
    with pytest.raises(DegenerateModelError):
        cluster_log_densities(np.zeros(3), params)


def test_params_round_trip():
    params = random_params(np.random.default_rng(1), 3, 6, 2)
    again = DfmParams.from_dict(params.to_dict())
    for name in ("pi", "means", "sigma", "beta", "U"):
        assert np.array_equal(getattr(params, name), getattr(again, name))


def test_constrain_examples():
    S = np.array([[[1.0, 0.5], [0.5, 3.0]], [[2.0, 0.0], [0.0, 4.0]]])
    b = np.array([1.0, 3.0])
    same_S, same_b = constrain_covariance(S, b, DfmModelSpec())
    assert np.array_equal(same_S, S) and np.array_equal(same_b, b)
    sph, _ = constrain_covariance(S[1:], b[1:], DfmModelSpec("spherical"))
    np.testing.assert_allclose(sph[0], np.diag([3.0, 3.0]))
    com, cb = constrain_covariance(S, b, DfmModelSpec("common_full", "common"), weights=[5, 5])
    np.testing.assert_allclose(com[0], S.mean(axis=0))
    np.testing.assert_allclose(com[1], S.mean(axis=0))
    np.testing.assert_allclose(cb, [2.0, 2.0])
    _, wb = constrain_covariance(S, b, DfmModelSpec("full", "common"), weights=[1, 3])
    np.testing.assert_allclose(wb, [2.5, 2.5])
    diag, _ = constrain_covariance(S, b, DfmModelSpec("diagonal"))
    np.testing.assert_allclose(diag[0], np.diag([1.0, 3.0]))


@pytest.mark.parametrize("model", ALL_MODELS, ids=lambda m: m.name)
def test_constrain_idempotent(model):
    rng = np.random.default_rng(7)
    A = rng.normal(size=(3, 2, 2))
    S = A @ np.swapaxes(A, 1, 2)
    b = rng.uniform(0.5, 2, 3)
    w = np.array([3.0, 5.0, 2.0])
    S1, b1 = constrain_covariance(S, b, model, w)
    S2, b2 = constrain_covariance(S1, b1, model, w)
    np.testing.assert_allclose(S2, S1, rtol=1e-14)
    np.testing.assert_allclose(b2, b1, rtol=1e-14)
