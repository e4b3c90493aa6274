"""Basis systems and least-squares reconstruction of curves from samples.

Two bases are supported: an orthonormal Fourier system and B-splines of
arbitrary order. Curves observed at (possibly curve-specific) sample times are
projected on the basis by per-curve least squares, giving the coefficient
matrix that all downstream clustering works on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import BSpline


class BasisError(ValueError):
    """Invalid basis definition or evaluation outside the basis domain."""


class SmoothingError(ValueError):
    """A curve cannot be projected on the basis."""

    def __init__(self, message, curve_index=None):
        super().__init__(message)
        self.curve_index = curve_index


@dataclass(frozen=True)
class SampledCurveSet:
    """n discretely observed curves, each with its own sampling times.

    Attributes
    ----------
    times, values : list of 1-D arrays
        Sample times (strictly increasing) and observed values of each curve.
    labels : array of int, optional
        Known class of each curve, used only for evaluation.
    ids : list of str, optional
        Curve identifiers.
    """

    times: list
    values: list
    labels: Optional[np.ndarray] = None
    ids: Optional[list] = None

    def __post_init__(self):
        times = [np.asarray(t, dtype=float) for t in self.times]
        values = [np.asarray(v, dtype=float) for v in self.values]
        if len(times) != len(values):
            raise ValueError("times and values must describe the same number of curves")
        for i, (t, v) in enumerate(zip(times, values)):
            if t.ndim != 1 or t.shape != v.shape:
                raise ValueError(f"curve {i}: times and values must be 1-D of equal length")
            if t.size < 1:
                raise ValueError(f"curve {i} has no samples")
            if np.any(np.diff(t) <= 0):
                raise ValueError(f"curve {i}: sample times must be strictly increasing")
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(t))):
                raise ValueError(f"curve {i}: non-finite sample")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (len(times),):
                raise ValueError("labels must hold one entry per curve")
            object.__setattr__(self, "labels", labels)
        if self.ids is not None:
            if len(self.ids) != len(times):
                raise ValueError("ids must hold one entry per curve")
            object.__setattr__(self, "ids", [str(s) for s in self.ids])

    @classmethod
    def from_grid(cls, times, values, labels=None, ids=None):
        """Build a curve set from an (n, m) value matrix sampled on a shared grid."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return cls([np.asarray(times, dtype=float)] * values.shape[0],
                   list(values), labels=labels, ids=ids)

    @property
    def n(self):
        return len(self.times)

    def __len__(self):
        return len(self.times)

    @property
    def domain(self):
        return (min(float(t[0]) for t in self.times),
                max(float(t[-1]) for t in self.times))


@dataclass(frozen=True)
class BasisSpec:
    """Definition of a finite basis {psi_1, ..., psi_p} on an interval.

    Use :func:`fourier_basis` or :func:`bspline_basis` rather than building
    this directly.
    """

    kind: str
    p: int
    domain: tuple
    period: Optional[float] = None
    order: Optional[int] = None
    interior_knots: tuple = ()

    def __post_init__(self):
        lo, hi = (float(x) for x in self.domain)
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise BasisError(f"invalid domain {self.domain}")
        object.__setattr__(self, "domain", (lo, hi))
        if int(self.p) != self.p or self.p < 1:
            raise BasisError("p must be a positive integer")
        object.__setattr__(self, "p", int(self.p))
        if self.kind == "fourier":
            if self.p % 2 == 0:
                raise BasisError("a Fourier basis needs an odd number of functions")
            period = hi - lo if self.period is None else float(self.period)
            if not period > 0:
                raise BasisError("Fourier period must be positive")
            object.__setattr__(self, "period", period)
        elif self.kind == "bspline":
            if self.order is None or int(self.order) < 1:
                raise BasisError("B-spline order must be a positive integer")
            knots = tuple(float(k) for k in self.interior_knots)
            object.__setattr__(self, "interior_knots", knots)
            if self.p != len(knots) + self.order:
                raise BasisError("B-spline basis requires p = #interior knots + order")
            if np.any(np.diff(knots) < 0):
                raise BasisError("knots must be non-decreasing")
            if knots and (knots[0] <= lo or knots[-1] >= hi):
                raise BasisError("interior knots must lie strictly inside the domain")
        else:
            raise BasisError(f"unknown basis kind {self.kind!r}")

    @property
    def knot_vector(self):
        lo, hi = self.domain
        return np.r_[[lo] * self.order, self.interior_knots, [hi] * self.order]

    def names(self):
        """Short human-readable label for every basis function."""
        if self.kind == "fourier":
            out = ["const"]
            for r in range(1, (self.p - 1) // 2 + 1):
                out += [f"sin{r}", f"cos{r}"]
            return out
        return [f"B{j + 1}" for j in range(self.p)]

    def angular_frequencies(self):
        """Angular frequency of each Fourier basis function (0 for the constant)."""
        if self.kind != "fourier":
            raise BasisError("frequencies are only defined for a Fourier basis")
        r = (np.arange(self.p) + 1) // 2
        return 2 * np.pi * r / self.period

    def to_dict(self):
        return {"kind": self.kind, "p": self.p, "domain": list(self.domain),
                "period": self.period, "order": self.order,
                "interior_knots": list(self.interior_knots)}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], p=d["p"], domain=tuple(d["domain"]),
                   period=d.get("period"), order=d.get("order"),
                   interior_knots=tuple(d.get("interior_knots") or ()))


def fourier_basis(p, domain, period=None):
    """Orthonormal Fourier basis: constant followed by (sin, cos) harmonic pairs.

    ``psi_1 = 1/sqrt(T)``, ``psi_2r = sqrt(2/T) sin(2 pi r (t - a) / T)`` and
    ``psi_2r+1 = sqrt(2/T) cos(2 pi r (t - a) / T)`` where ``a`` is the left
    end of the domain and ``T`` the period (the domain length by default).
    """
    return BasisSpec("fourier", p, tuple(domain), period=period)


def bspline_basis(p, domain, order=4, knots=None):
    """B-spline basis of the given order; uniform interior knots unless given."""
    lo, hi = domain
    if knots is None:
        n_interior = p - order
        if n_interior < 0:
            raise BasisError("p must be at least the spline order")
        knots = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return BasisSpec("bspline", p, (lo, hi), order=order, interior_knots=tuple(knots))


def _check_times(basis, times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise BasisError("times must be a 1-D array")
    lo, hi = basis.domain
    bad = (times < lo) | (times > hi) | ~np.isfinite(times)
    if np.any(bad):
        raise BasisError(f"time {times[bad][0]!r} outside basis domain [{lo}, {hi}]")
    return times


def eval_basis(basis, times):
    """Evaluate every basis function at ``times``; returns a (len(times), p) matrix."""
    times = _check_times(basis, times)
    if basis.kind == "fourier":
        T = basis.period
        out = np.empty((times.size, basis.p))
        out[:, 0] = 1.0 / np.sqrt(T)
        phase = 2 * np.pi * (times - basis.domain[0]) / T
        scale = np.sqrt(2.0 / T)
        for r in range(1, (basis.p - 1) // 2 + 1):
            out[:, 2 * r - 1] = scale * np.sin(r * phase)
            out[:, 2 * r] = scale * np.cos(r * phase)
        return out
    k = basis.order - 1
    dm = BSpline.design_matrix(times, basis.knot_vector, k)
    return dm.toarray()


def gram_matrix(basis):
    """Gram matrix ``W = int Psi(s) Psi(s)' ds`` of the basis.

    For the Fourier system the integral runs over one period, where the
    functions are orthonormal and W is the identity. For B-splines it is
    computed exactly by Gauss-Legendre quadrature on each knot span.
    """
    if basis.kind == "fourier":
        return np.eye(basis.p)
    return _bspline_gram(basis, n_nodes=2 * basis.order)


def _bspline_gram(basis, n_nodes):
    breaks = np.unique(np.r_[basis.domain[0], basis.interior_knots, basis.domain[1]])
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    W = np.zeros((basis.p, basis.p))
    for a, b in zip(breaks[:-1], breaks[1:]):
        nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
        B = eval_basis(basis, nodes)
        W += (B * (0.5 * (b - a) * w)[:, None]).T @ B
    return 0.5 * (W + W.T)


@dataclass
class CoefficientMatrix:
    """Basis expansion coefficients of n curves (the n x p matrix Gamma).

    When ``centered`` is true the column means have been removed from
    ``gamma`` and are kept in ``mean_coeffs``.
    """

    gamma: np.ndarray
    basis: BasisSpec
    mean_coeffs: np.ndarray = field(default=None)
    centered: bool = False
    ids: Optional[list] = None

    def __post_init__(self):
        self.gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if self.gamma.shape[1] != self.basis.p:
            raise ValueError("gamma must have p columns")
        if self.mean_coeffs is None:
            self.mean_coeffs = np.zeros(self.basis.p)
        self.mean_coeffs = np.asarray(self.mean_coeffs, dtype=float)

    @property
    def n(self):
        return self.gamma.shape[0]

    @property
    def p(self):
        return self.gamma.shape[1]

    def uncentered(self):
        """Coefficients with the column means added back."""
        return self.gamma + self.mean_coeffs if self.centered else self.gamma.copy()

    def center(self):
        """Return a centered copy (no-op if already centered)."""
        if self.centered:
            return self
        m = self.gamma.mean(axis=0)
        return CoefficientMatrix(self.gamma - m, self.basis, m, True, self.ids)


def _lstsq_svd(theta, rhs, index):
    u, s, vt = np.linalg.svd(theta, full_matrices=False)
    tol = s[0] * max(theta.shape) * np.finfo(float).eps
    if s[-1] <= tol:
        raise SmoothingError(f"curve {index}: basis matrix is rank deficient", index)
    return vt.T @ ((u.T @ rhs) / s[:, None])


def smooth_curves(obs, basis, center=True):
    """Least-squares projection of every curve on the basis.

    Curves sharing an identical sampling grid are solved together from one
    SVD of their basis matrix.

    Parameters
    ----------
    obs : SampledCurveSet
    basis : BasisSpec
    center : bool
        Subtract the column means of the coefficient matrix (kept in
        ``mean_coeffs``).

    Returns
    -------
    CoefficientMatrix
    """
    gamma = np.empty((obs.n, basis.p))
    groups = {}
    for i, t in enumerate(obs.times):
        if t.size < basis.p:
            raise SmoothingError(
                f"curve {i} has {t.size} samples, fewer than p={basis.p}", i)
        groups.setdefault(t.tobytes(), []).append(i)
    for members in groups.values():
        t = obs.times[members[0]]
        try:
            theta = eval_basis(basis, t)
        except BasisError as exc:
            raise SmoothingError(f"curve {members[0]}: {exc}", members[0]) from exc
        rhs = np.column_stack([obs.values[i] for i in members])
        gamma[members] = _lstsq_svd(theta, rhs, members[0]).T
    coeffs = CoefficientMatrix(gamma, basis, None, False, obs.ids)
    return coeffs.center() if center else coeffs


def reconstruct(coeffs, times):
    """Evaluate the curves x_i(t) = sum_j gamma_ij psi_j(t) (un-centered) at ``times``."""
    return coeffs.uncentered() @ eval_basis(coeffs.basis, times).T
