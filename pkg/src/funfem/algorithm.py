"""FunFEM: alternating Fisher-subspace, maximization and expectation steps.

Given centered basis coefficients Gamma (n x p), the Gram matrix W of the
basis and the current posteriors T, the F step finds the functions
``u(t) = Psi(t)' nu`` maximizing the ratio of between-cluster to total variance
of ``int X(t) u(t) dt``. In coefficients this is the symmetric-definite pencil

    (W Gamma' T~ T~' Gamma W) nu = eta (W Gamma' Gamma W) nu,

with ``T~ = (t_ik / sqrt(n_k))``, which has the same eigenpairs as
``(Gamma'Gamma W)^-1 Gamma' T~ T~' Gamma W nu = eta nu``. The M step then fits
the DFM parameters with the orientation fixed and the E step updates the
posteriors by Bayes' rule.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .basis import CoefficientMatrix
from .dfm import (BETA_FLOOR, DegenerateModelError, DfmModelSpec, DfmParams,
                  cluster_log_densities, constrain_covariance, free_parameter_count)

log = logging.getLogger(__name__)

EMPTY_CLUSTER = 1e-3


class EmptyClusterError(DegenerateModelError):
    """A cluster lost (almost) all its posterior mass; the run must restart."""


class SparsityError(ValueError):
    """The l1 penalty removed a whole discriminative direction."""


class FitError(RuntimeError):
    """Every restart of a fit failed."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


def _gamma(coeffs):
    return coeffs.gamma if isinstance(coeffs, CoefficientMatrix) else np.asarray(coeffs, float)


@dataclass(frozen=True)
class PosteriorMatrix:
    """Responsibilities t_ik (rows sum to one) and soft counts n_k."""

    T: np.ndarray

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.T, float))
        if np.any(T < -1e-12) or np.any(T > 1 + 1e-12):
            raise ValueError("posterior probabilities must lie in [0, 1]")
        if not np.allclose(T.sum(axis=1), 1.0, atol=1e-10, rtol=0):
            raise ValueError("posterior rows must sum to 1")
        object.__setattr__(self, "T", T)

    @classmethod
    def from_labels(cls, labels, K=None):
        labels = np.asarray(labels, int)
        K = labels.max() + 1 if K is None else K
        return cls(np.eye(K)[labels])

    @property
    def n_k(self):
        return self.T.sum(axis=0)

    @property
    def K(self):
        return self.T.shape[1]

    @property
    def labels(self):
        return self.T.argmax(axis=1)


@dataclass(frozen=True)
class DiscriminativeSubspace:
    """Orientation of the discriminative subspace.

    Attributes
    ----------
    U : (p, d) orthonormal basis of the subspace (columns ordered by eigenvalue).
    directions : (p, d) raw discriminant coefficient vectors nu_j, each scaled
        to unit total variance ``nu' W C W nu = 1``.
    eigenvalues : (d,) Fisher ratios, non-increasing.
    sparse : whether the loadings come from the l1-penalized variant.
    lam : penalty used (0 for the dense solution).
    """

    U: np.ndarray
    directions: np.ndarray
    eigenvalues: np.ndarray
    sparse: bool = False
    lam: float = 0.0

    @property
    def d(self):
        return self.U.shape[1]

    @property
    def zero_fraction(self):
        return float(np.mean(self.U == 0.0))

    @property
    def selected(self):
        """Boolean mask of basis functions with a nonzero loading."""
        return np.any(self.U != 0.0, axis=1)

    def to_dict(self):
        return {"U": self.U.tolist(), "directions": self.directions.tolist(),
                "eigenvalues": self.eigenvalues.tolist(), "sparse": self.sparse,
                "lambda": self.lam}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["U"]), np.array(d["directions"]),
                   np.array(d["eigenvalues"]), bool(d["sparse"]), float(d["lambda"]))


@dataclass(frozen=True)
class FittedModel:
    """Result of :func:`fit`."""

    params: DfmParams
    posteriors: PosteriorMatrix
    subspace: DiscriminativeSubspace
    loglik_trace: np.ndarray
    converged: bool
    n_iter: int
    model: DfmModelSpec
    restart: int = 0
    failures: tuple = field(default=())

    @property
    def loglik(self):
        return float(self.loglik_trace[-1])

    @property
    def K(self):
        return self.params.K

    @property
    def d(self):
        return self.params.d

    @property
    def n(self):
        return self.posteriors.T.shape[0]

    @property
    def labels(self):
        return self.posteriors.labels

    @property
    def n_free_params(self):
        return free_parameter_count(self.model, self.K, self.params.p, self.d)

    def to_dict(self):
        return {"model": self.model.name, "K": self.K, "d": self.d, "n": self.n,
                "p": self.params.p, "loglik": self.loglik,
                "n_free_params": self.n_free_params, "converged": self.converged,
                "n_iter": self.n_iter, "restart": self.restart,
                "loglik_trace": self.loglik_trace.tolist(),
                "params": self.params.to_dict(), "subspace": self.subspace.to_dict(),
                "posteriors": self.posteriors.T.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(DfmParams.from_dict(d["params"]), PosteriorMatrix(np.array(d["posteriors"])),
                   DiscriminativeSubspace.from_dict(d["subspace"]),
                   np.array(d["loglik_trace"]), bool(d["converged"]), int(d["n_iter"]),
                   DfmModelSpec.from_name(d["model"]), int(d.get("restart", 0)))


def initialize(coeffs, K, strategy="kmeans", rng_seed=0):
    """Starting posteriors for :func:`fit`.

    ``kmeans`` gives hard posteriors from Lloyd's algorithm on the rows of
    Gamma (best inertia over 20 starts); ``random_posterior`` draws each row
    from a flat Dirichlet distribution.
    """
    G = _gamma(coeffs)
    if K < 2:
        raise ValueError("K must be at least 2")
    if G.shape[0] < K:
        raise ValueError(f"cannot form K={K} clusters from n={G.shape[0]} curves")
    if strategy == "kmeans":
        from sklearn.cluster import KMeans
        labels = KMeans(n_clusters=K, n_init=20, random_state=rng_seed).fit_predict(G)
        return PosteriorMatrix.from_labels(labels, K)
    if strategy == "random_posterior":
        rng = np.random.default_rng(rng_seed)
        T = rng.dirichlet(np.ones(K), size=G.shape[0])
        return PosteriorMatrix(T / T.sum(axis=1, keepdims=True))
    raise ValueError(f"unknown initialization strategy {strategy!r}")


def _scatter(G, W, T):
    n = G.shape[0]
    n_k = T.sum(axis=0)
    GW = G @ W
    St = GW.T @ GW / n
    M = GW.T @ (T / np.sqrt(n_k))
    Sb = M @ M.T / n
    return 0.5 * (St + St.T), 0.5 * (Sb + Sb.T), GW


def _orthonormalize(V):
    Q, R = np.linalg.qr(V)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _fix_sign(v):
    i = np.argmax(np.abs(v))
    return v if v[i] >= 0 else -v


def f_step(coeffs, W, post, d=None):
    """Discriminative subspace for the current posteriors.

    Directions are extracted one at a time: the j-th maximizes the Fisher
    ratio among functions uncorrelated (in total covariance) with the
    previous ones, which is the generalized eigenproblem restricted to the
    complement of the directions already found.

    Returns
    -------
    DiscriminativeSubspace
    """
    G = _gamma(coeffs)
    T = post.T if isinstance(post, PosteriorMatrix) else np.asarray(post, float)
    K = T.shape[1]
    p = G.shape[1]
    d = K - 1 if d is None else d
    if not 1 <= d <= max(K - 1, 1) or d >= p:
        raise ValueError(f"invalid latent dimension d={d} for K={K}, p={p}")
    if np.any(T.sum(axis=0) <= 0):
        raise EmptyClusterError("a cluster has no posterior mass")
    W = np.asarray(W, float)
    St, Sb, _ = _scatter(G, W, T)
    ridge = 1e-8 * np.trace(St) / p
    if not ridge > 0:
        raise DegenerateModelError("total covariance of the coefficients is zero")
    St_r = St + ridge * np.eye(p)

    nus, etas = [], []
    for j in range(d):
        if j == 0:
            Q = np.eye(p)
        else:
            Q = scipy.linalg.null_space((St @ np.column_stack(nus)).T)
        A = Q.T @ Sb @ Q
        B = Q.T @ St_r @ Q
        evals, evecs = scipy.linalg.eigh(0.5 * (A + A.T), 0.5 * (B + B.T))
        nu = Q @ evecs[:, -1]
        scale = nu @ St @ nu
        if not scale > 0:
            raise DegenerateModelError("discriminant direction has zero variance")
        nus.append(_fix_sign(nu / np.sqrt(scale)))
        etas.append(evals[-1])
    V = np.column_stack(nus)
    etas = np.array(etas)
    if np.any(etas < -1e-8):
        raise DegenerateModelError(f"negative Fisher ratio {etas.min():.3g}")
    return DiscriminativeSubspace(_orthonormalize(V), V, np.maximum(etas, 0.0))


def _lasso_cd(XtX, Xty, lam, b0, max_sweeps=1000, tol=1e-7):
    """Coordinate descent for ``min_b 1/2 b'XtX b - b'Xty + lam |b|_1``."""
    b = b0.copy()
    diag = np.diag(XtX).copy()
    active = diag > 1e-14 * max(diag.max(), 1e-300)
    b[~active] = 0.0
    grad = Xty - XtX @ b
    for _ in range(max_sweeps):
        delta = 0.0
        for j in np.flatnonzero(active):
            old = b[j]
            z = grad[j] + diag[j] * old
            new = np.sign(z) * max(abs(z) - lam, 0.0) / diag[j]
            if new != old:
                grad -= XtX[:, j] * (new - old)
                b[j] = new
                delta = max(delta, abs(new - old))
        if delta < tol:
            break
    return b


def sparse_f_step(coeffs, W, post, d=None, lam=0.1, warm_start=None,
                  max_sweeps=1000, tol=1e-7):
    """l1-penalized discriminative subspace.

    Each dense discriminant score ``y_j = Gamma W nu_j`` is regressed back on
    the columns of ``Gamma W`` with an l1 penalty,

        min_b  1/(2n) |y_j - Gamma W b|^2 + lam |b|_1,

    by coordinate descent, warm-started along a decreasing penalty path.
    With ``lam = 0`` the dense directions are returned unchanged; basis
    functions whose coefficients have no variance always get a zero loading.
    The penalized directions are then orthonormalized, which keeps rows that
    are zero in every direction at exactly zero.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    G = _gamma(coeffs)
    T = post.T if isinstance(post, PosteriorMatrix) else np.asarray(post, float)
    W = np.asarray(W, float)
    dense = warm_start if warm_start is not None else f_step(G, W, T, d)
    if lam == 0:
        return DiscriminativeSubspace(dense.U, dense.directions, dense.eigenvalues, True, 0.0)
    St, Sb, _ = _scatter(G, W, T)
    cols = []
    for j in range(dense.d):
        nu = dense.directions[:, j]
        Xty = St @ nu
        lam_max = np.abs(Xty).max()
        b = np.zeros_like(nu)
        path = np.geomspace(lam_max, lam, 6) if lam < lam_max else [lam]
        for level in path:
            b = _lasso_cd(St, Xty, level, b, max_sweeps, tol)
        if not np.any(b):
            raise SparsityError(f"lambda={lam} zeroes out discriminative direction {j + 1}")
        cols.append(_fix_sign(b))
    B = np.column_stack(cols)
    if np.linalg.matrix_rank(B) < B.shape[1]:
        raise SparsityError(f"lambda={lam}: sparse loadings span fewer than "
                            f"{B.shape[1]} directions")
    U = _orthonormalize(B)
    U[~np.any(B != 0, axis=1)] = 0.0
    etas = np.array([(u @ Sb @ u) / (u @ St @ u) for u in B.T])
    return DiscriminativeSubspace(U, B, etas, True, float(lam))


def project(coeffs, subspace, W):
    """Discriminative coordinates ``Gamma W U`` of every curve, shape (n, d)."""
    U = subspace.U if isinstance(subspace, DiscriminativeSubspace) else np.asarray(subspace)
    return _gamma(coeffs) @ np.asarray(W, float) @ U


def m_step(coeffs, post, subspace, model):
    """Conditional maximum-likelihood update of the mixture parameters given U.

    ``pi_k = n_k / n``, ``m_k`` the posterior-weighted mean, ``Sigma_k = U' C_k U``
    and ``beta_k = (trace C_k - trace U' C_k U) / (p - d)`` where C_k is the
    weighted covariance of cluster k; the structure of ``model`` is imposed
    afterwards.
    """
    G = _gamma(coeffs)
    T = post.T if isinstance(post, PosteriorMatrix) else np.asarray(post, float)
    U = subspace.U if isinstance(subspace, DiscriminativeSubspace) else np.asarray(subspace)
    n, p = G.shape
    d = U.shape[1]
    n_k = T.sum(axis=0)
    if np.any(n_k < EMPTY_CLUSTER):
        raise EmptyClusterError(f"empty cluster(s) {np.flatnonzero(n_k < EMPTY_CLUSTER).tolist()}")
    means = (T.T @ G) / n_k[:, None]
    K = T.shape[1]
    sigmas = np.empty((K, d, d))
    betas = np.empty(K)
    for k in range(K):
        c = G - means[k]
        proj = c @ U
        tk = T[:, k]
        sigmas[k] = (proj * tk[:, None]).T @ proj / n_k[k]
        total = tk @ np.einsum("ij,ij->i", c, c) / n_k[k]
        betas[k] = (total - np.trace(sigmas[k])) / (p - d)
    sigmas, betas = constrain_covariance(sigmas, betas, model, weights=n_k)
    if np.any(betas < BETA_FLOOR):
        warnings.warn(f"noise variance floored at {BETA_FLOOR}", RuntimeWarning)
        betas = np.maximum(betas, BETA_FLOOR)
    return DfmParams(n_k / n, means, sigmas, betas, U)


def e_step(coeffs, params):
    """Posterior probabilities by Bayes' rule and the observed log-likelihood."""
    logd = cluster_log_densities(np.atleast_2d(_gamma(coeffs)), params)
    lse = logsumexp(logd, axis=1)
    T = np.exp(logd - lse[:, None])
    T /= T.sum(axis=1, keepdims=True)
    return PosteriorMatrix(T), float(lse.sum())


def _run(G, W, T, model, d, max_iter, tol):
    trace = []
    converged = False
    for it in range(max_iter):
        sub = f_step(G, W, T, d)
        params = m_step(G, T, sub, model)
        post, ll = e_step(G, params)
        if not np.isfinite(ll):
            raise DegenerateModelError("non-finite log-likelihood")
        trace.append(ll)
        T = post.T
        if it > 0 and abs(ll - trace[-2]) < tol * abs(ll):
            converged = True
            break
    return params, post, sub, np.array(trace), converged


def fit(coeffs, W, K, model=DfmModelSpec(), max_iter=100, tol=1e-6, init="kmeans",
        seed=0, n_restarts=5, d=None):
    """Fit a DFM model by the FunFEM algorithm.

    Parameters
    ----------
    coeffs : CoefficientMatrix or (n, p) array of centered coefficients.
    W : (p, p) Gram matrix of the basis.
    K : number of clusters.
    model : DfmModelSpec
    max_iter, tol : stop when the relative log-likelihood change drops
        below ``tol`` or after ``max_iter`` F-M-E iterations.
    init : ``"kmeans"`` or ``"random_posterior"``; restart r uses seed ``seed + r``.
    n_restarts : number of initializations; the fit with the highest final
        log-likelihood is kept.
    d : latent dimension, K - 1 by default.

    Returns
    -------
    FittedModel

    Raises
    ------
    FitError
        If every restart ends with an empty or degenerate cluster.
    """
    G = _gamma(coeffs)
    W = np.asarray(W, float)
    d = K - 1 if d is None else d
    if K < 2:
        raise ValueError("K must be at least 2")
    best, failures = None, []
    for r in range(n_restarts):
        try:
            T0 = initialize(G, K, init, seed + r).T
            params, post, sub, trace, conv = _run(G, W, T0, model, d, max_iter, tol)
        except (DegenerateModelError, np.linalg.LinAlgError) as exc:
            failures.append((r, f"{type(exc).__name__}: {exc}"))
            continue
        if best is None or trace[-1] > best.loglik:
            best = FittedModel(params, post, sub, trace, conv, len(trace), model, r)
    if best is None:
        raise FitError(f"all {n_restarts} restarts failed for {model.name}, K={K}: "
                       + "; ".join(msg for _, msg in failures), failures)
    if failures:
        best = FittedModel(best.params, best.posteriors, best.subspace, best.loglik_trace,
                           best.converged, best.n_iter, model, best.restart, tuple(failures))
    return best
