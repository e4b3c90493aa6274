"""The discriminative functional mixture (DFM) model family.

A DFM model is a Gaussian mixture on basis coefficients gamma in R^p whose
group structure lives in a d-dimensional subspace spanned by the orthonormal
columns of U. In cluster k the covariance is ``U Sigma_k U' + beta_k (I - U U')``:
``Sigma_k`` is the latent covariance and ``beta_k`` an isotropic noise
variance on the orthogonal complement. The twelve family members constrain
``Sigma_k`` (six structures) and ``beta_k`` (per cluster or common).
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

SIGMA_STRUCTURES = ("full", "common_full", "diagonal", "common_diagonal",
                    "spherical", "common_spherical")
BETA_STRUCTURES = ("per_cluster", "common")

_SIGMA_NAMES = {"full": "Sigma_k", "common_full": "Sigma", "diagonal": "alpha_kj",
                "common_diagonal": "alpha_j", "spherical": "alpha_k",
                "common_spherical": "alpha"}
_BETA_NAMES = {"per_cluster": "beta_k", "common": "beta"}

EIGEN_FLOOR = 1e-10
BETA_FLOOR = 1e-8
LOG_2PI = np.log(2 * np.pi)


class DegenerateModelError(ArithmeticError):
    """Mixture parameters that cannot define a proper Gaussian density."""


@dataclass(frozen=True)
class DfmModelSpec:
    """One of the twelve covariance parameterizations of the DFM family."""

    sigma_structure: str = "full"
    beta_structure: str = "per_cluster"

    def __post_init__(self):
        if self.sigma_structure not in SIGMA_STRUCTURES:
            raise ValueError(f"unknown Sigma structure {self.sigma_structure!r}")
        if self.beta_structure not in BETA_STRUCTURES:
            raise ValueError(f"unknown beta structure {self.beta_structure!r}")

    @property
    def name(self):
        return (f"DFM[{_SIGMA_NAMES[self.sigma_structure]},"
                f"{_BETA_NAMES[self.beta_structure]}]")

    def __str__(self):
        return self.name

    @property
    def common_sigma(self):
        return self.sigma_structure.startswith("common")

    @property
    def common_beta(self):
        return self.beta_structure == "common"

    @classmethod
    def from_name(cls, name):
        """Parse names such as ``DFM[Sigma_k,beta]`` or ``alpha_kj, beta_k``."""
        m = re.fullmatch(r"\s*(?:DFM)?\s*\[?\s*([A-Za-z_]+)\s*,\s*([A-Za-z_]+)\s*\]?\s*", name)
        if m is None:
            raise ValueError(f"cannot parse model name {name!r}")
        sig = {v.lower(): k for k, v in _SIGMA_NAMES.items()}.get(m.group(1).lower())
        beta = {v.lower(): k for k, v in _BETA_NAMES.items()}.get(m.group(2).lower())
        if sig is None or beta is None:
            raise ValueError(f"unknown model name {name!r}")
        return cls(sig, beta)


# Table order: Sigma_k, Sigma, alpha_kj, alpha_k, alpha_j, alpha; beta_k before beta.
ALL_MODELS = tuple(DfmModelSpec(s, b)
                   for s in ("full", "common_full", "diagonal", "spherical",
                             "common_diagonal", "common_spherical")
                   for b in BETA_STRUCTURES)


def _check_dims(K, p, d):
    d = K - 1 if d is None else d
    if K < 1 or int(K) != K:
        raise ValueError("K must be a positive integer")
    if not 1 <= d <= max(K - 1, 1):
        raise ValueError(f"latent dimension d={d} must satisfy 1 <= d <= K-1")
    if d >= p:
        raise ValueError(f"latent dimension d={d} must be smaller than p={p}")
    return int(K), int(p), int(d)


def param_count(model, K, p, d=None):
    """Number of free variance parameters (orientation, Sigma_k, beta_k).

    With ``d = K - 1`` (the default) this is the count tabulated for the DFM
    family: ``(K-1)(p-K/2)`` for the orientation plus the Sigma and beta terms.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    K, p, d = _check_dims(K, p, d)
    orientation = d * p - d * (d + 1) // 2
    sigma = {"full": K * d * (d + 1) // 2,
             "common_full": d * (d + 1) // 2,
             "diagonal": K * d,
             "common_diagonal": d,
             "spherical": K,
             "common_spherical": 1}[model.sigma_structure]
    beta = 1 if model.common_beta else K
    return orientation + sigma + beta


def free_parameter_count(model, K, p, d=None):
    """Total xi(M): variance parameters + (K-1) proportions + K*d latent means."""
    K, p, d = _check_dims(K, p, d)
    return param_count(model, K, p, d) + (K - 1) + K * d


@dataclass(frozen=True)
class DfmParams:
    """Parameters of a fitted DFM mixture.

    Attributes
    ----------
    pi : (K,) mixing proportions.
    means : (K, p) cluster means in coefficient space.
    sigma : (K, d, d) latent covariances (identical slices when common).
    beta : (K,) noise variances outside the subspace (identical when common).
    U : (p, d) orientation with orthonormal columns.
    """

    pi: np.ndarray
    means: np.ndarray
    sigma: np.ndarray
    beta: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, float)
        means = np.atleast_2d(np.asarray(self.means, float))
        U = np.asarray(self.U, float).reshape(means.shape[1], -1)
        K, p, d = pi.size, means.shape[1], U.shape[1]
        sigma = np.asarray(self.sigma, float).reshape(K, d, d)
        beta = np.broadcast_to(np.asarray(self.beta, float), (K,)).copy()
        if means.shape[0] != K:
            raise ValueError("means must have one row per cluster")
        if np.any(pi <= 0) or abs(pi.sum() - 1) > 1e-8:
            raise ValueError("mixing proportions must be positive and sum to 1")
        if np.any(beta <= 0):
            raise DegenerateModelError("noise variances must be positive")
        if d >= p:
            raise ValueError("latent dimension must be smaller than p")
        if not np.allclose(U.T @ U, np.eye(d), atol=1e-8):
            raise ValueError("U must have orthonormal columns")
        if not np.allclose(sigma, np.swapaxes(sigma, 1, 2), atol=1e-10 * (1 + np.abs(sigma).max())):
            raise ValueError("latent covariances must be symmetric")
        for name, val in (("pi", pi), ("means", means), ("sigma", sigma),
                          ("beta", beta), ("U", U)):
            object.__setattr__(self, name, val)

    @property
    def K(self):
        return self.pi.size

    @property
    def p(self):
        return self.means.shape[1]

    @property
    def d(self):
        return self.U.shape[1]

    @property
    def mu(self):
        """Latent cluster means U' m_k, shape (K, d)."""
        return self.means @ self.U

    def to_dict(self):
        return {"K": self.K, "p": self.p, "d": self.d,
                "pi": self.pi.tolist(), "means": self.means.tolist(),
                "sigma": self.sigma.tolist(), "beta": self.beta.tolist(),
                "U": self.U.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["pi"]), np.array(d["means"]), np.array(d["sigma"]),
                   np.array(d["beta"]), np.array(d["U"]))


def _sym_eig(S):
    evals, evecs = np.linalg.eigh(0.5 * (S + S.T))
    scale = max(abs(evals).max(), 1.0)
    if evals[0] < -1e-8 * scale:
        raise DegenerateModelError(f"latent covariance is not positive definite "
                                   f"(eigenvalue {evals[0]:.3g})")
    return np.maximum(evals, EIGEN_FLOOR), evecs


def cluster_log_densities(gamma, params):
    """Log of ``pi_k phi_k(gamma)`` for every cluster.

    The subspace block structure is used directly: the density splits into a
    d-dimensional Gaussian on ``U'(gamma - m_k)`` and an isotropic term on the
    residual outside span(U), so the complement basis is never formed.

    Parameters
    ----------
    gamma : (p,) or (n, p) array
    params : DfmParams

    Returns
    -------
    (K,) or (n, K) array
    """
    g = np.asarray(gamma, float)
    single = g.ndim == 1
    g = np.atleast_2d(g)
    p, d, U = params.p, params.d, params.U
    out = np.empty((g.shape[0], params.K))
    for k in range(params.K):
        c = g - params.means[k]
        proj = c @ U
        resid = c - proj @ U.T
        evals, evecs = _sym_eig(params.sigma[k])
        z = (proj @ evecs) / np.sqrt(evals)
        quad = np.einsum("ij,ij->i", z, z)
        res2 = np.einsum("ij,ij->i", resid, resid)
        b = params.beta[k]
        out[:, k] = np.log(params.pi[k]) - 0.5 * (
            quad + res2 / b + np.log(evals).sum() + (p - d) * np.log(b) + p * LOG_2PI)
    return out[0] if single else out


def constrain_covariance(sigmas, betas, model, weights=None):
    """Project empirical (Sigma_k, beta_k) onto the structure of ``model``.

    Common structures take the ``weights``-weighted average across clusters
    (cluster sizes n_k; equal weights by default), diagonal structures drop
    off-diagonal entries and spherical ones replace the diagonal by its mean.
    """
    sigmas = np.array(sigmas, dtype=float, copy=True)
    betas = np.array(betas, dtype=float, copy=True)
    K, d = sigmas.shape[0], sigmas.shape[1]
    w = np.ones(K) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    s = model.sigma_structure
    if s.startswith("common"):
        sigmas[:] = np.tensordot(w, sigmas, axes=1)
    if s in ("diagonal", "common_diagonal"):
        sigmas = sigmas * np.eye(d)
    elif s in ("spherical", "common_spherical"):
        level = np.trace(sigmas, axis1=1, axis2=2) / d
        sigmas = level[:, None, None] * np.eye(d)
    if model.common_beta:
        betas[:] = w @ betas
    return sigmas, betas
