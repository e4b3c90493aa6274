"""Model selection: AIC, BIC and the slope heuristic over a (model, K) grid.

All criteria are written as penalized log-likelihoods to be maximized.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .algorithm import FitError, FittedModel, fit
from .dfm import DfmModelSpec, param_count

log = logging.getLogger(__name__)

CRITERIA = ("aic", "bic", "shc")


def aic(loglik, xi):
    return loglik - xi


def bic(loglik, xi, n):
    if n < 1:
        raise ValueError("n must be positive")
    return loglik - 0.5 * xi * math.log(n)


@dataclass(frozen=True)
class CriterionScore:
    criterion: str
    value: float
    xi: int
    loglik: float
    slope: Optional[float] = None


def _lad_line(x, y, n_iter=50):
    """Least-absolute-deviation line by iteratively reweighted least squares."""
    X = np.column_stack([np.ones_like(x), x])
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    eps = 1e-10 * (np.ptp(y) + np.finfo(float).tiny)
    for _ in range(n_iter):
        r = np.abs(y - X @ coef)
        w = 1.0 / np.maximum(r, eps)
        sw = np.sqrt(w)
        coef = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
    return coef, y - X @ coef


@dataclass(frozen=True)
class SlopeHeuristic:
    """Outcome of the slope heuristic.

    ``linear_range`` is the (min xi, max xi) span of the points judged to be
    in the linear part; ``residuals`` are the robust-fit residuals there.
    """

    shc: np.ndarray
    slope: float
    intercept: float
    linear_range: tuple
    linear_mask: np.ndarray
    residuals: np.ndarray


def slope_heuristic(xi, loglik):
    """Slope-heuristic criterion ``SHC = loglik - 2 s xi``.

    The slope ``s`` of the linear part of loglik versus xi is found by fitting
    robust lines to every suffix (in increasing xi) holding at least
    ``max(4, 40%)`` of the points and keeping the suffix with the smallest
    median absolute residual; ties go to the longer suffix.
    """
    xi = np.asarray(xi, float)
    ll = np.asarray(loglik, float)
    if xi.shape != ll.shape or xi.ndim != 1:
        raise ValueError("xi and loglik must be 1-D arrays of equal length")
    if xi.size < 4:
        raise ValueError("the slope heuristic needs at least 4 models")
    if np.unique(xi).size < 2:
        raise ValueError("all models have the same dimension")
    if np.unique(xi).size < 4:
        raise ValueError("the slope heuristic needs at least 4 distinct dimensions")
    order = np.argsort(xi, kind="stable")
    # Fit on centered values so that the result does not depend on the
    # location of xi or loglik.
    x0, y0 = xi.mean(), ll.mean()
    xs, ys = xi[order] - x0, ll[order] - y0
    n = xs.size
    min_len = max(4, math.ceil(0.4 * n))
    tie = 1e-9 * (np.ptp(ys) + np.finfo(float).tiny)
    best = None
    for start in range(0, n - min_len + 1):
        if np.unique(xs[start:]).size < 2:
            continue
        coef, res = _lad_line(xs[start:], ys[start:])
        score = float(np.median(np.abs(res)))
        if best is None or score < best[0] - tie:
            best = (score, start, coef, res)
    if best is None:
        raise ValueError("no suffix with distinct dimensions")
    _, start, coef, res = best
    slope = float(coef[1])
    mask = np.zeros(n, dtype=bool)
    mask[order[start:]] = True
    intercept = float(coef[0] + y0 - slope * x0)
    return SlopeHeuristic(ll - 2.0 * slope * xi, slope, intercept,
                          (float(xs[start] + x0), float(xs[-1] + x0)), mask, res)


@dataclass
class GridCell:
    model: DfmModelSpec
    K: int
    loglik: float = float("nan")
    xi: int = 0
    xi_variance: int = 0
    scores: dict = field(default_factory=dict)
    error: Optional[str] = None
    fitted: Optional[FittedModel] = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class SelectionResult:
    """Scores of every (model, K) cell and the best cell per criterion."""

    cells: list
    n: int
    best: dict
    slope: Optional[SlopeHeuristic] = None
    xi_convention: str = "total"

    def best_cell(self, criterion):
        choice = self.best.get(criterion)
        if choice is None:
            return None
        for cell in self.cells:
            if cell.model.name == choice[0] and cell.K == choice[1]:
                return cell
        return None

    def to_dict(self):
        sl = None
        if self.slope is not None:
            sl = {"slope": self.slope.slope, "intercept": self.slope.intercept,
                  "linear_range": list(self.slope.linear_range),
                  "residuals": self.slope.residuals.tolist()}
        return {"n": self.n, "xi_convention": self.xi_convention,
                "best": {c: (None if b is None else {"model": b[0], "K": b[1]})
                         for c, b in self.best.items()},
                "slope_heuristic": sl,
                "cells": [{"model": c.model.name, "K": c.K, "ok": c.ok, "error": c.error,
                           "loglik": c.loglik if c.ok else None, "xi": c.xi,
                           "xi_variance": c.xi_variance,
                           "scores": {k: v for k, v in c.scores.items()}}
                          for c in self.cells]}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path, fmt="%.12g"):
        """One row per cell: model, K, status, loglik, xi, aic, bic, shc, best flags."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "K", "status", "loglik", "xi", "xi_variance",
                        "aic", "bic", "shc", "best_aic", "best_bic", "best_shc"])
            for c in self.cells:
                def num(v):
                    return "" if v is None or not np.isfinite(v) else fmt % v
                flags = [int(self.best.get(k) == (c.model.name, c.K)) for k in CRITERIA]
                w.writerow([c.model.name, c.K, "ok" if c.ok else "failed",
                            num(c.loglik if c.ok else None), c.xi, c.xi_variance]
                           + [num(c.scores.get(k)) for k in CRITERIA] + flags)


def _fit_cell(args):
    coeffs, W, model, K, opts = args
    cell = GridCell(model, K)
    try:
        cell.xi_variance = param_count(model, K, coeffs.shape[1])
        fitted = fit(coeffs, W, K, model, **opts)
    except (FitError, ValueError) as exc:
        cell.error = str(exc)
        return cell
    cell.fitted = fitted
    cell.loglik = fitted.loglik
    cell.xi = fitted.n_free_params
    return cell


def grid_search(coeffs, W, models, K_range, criterion="bic", fit_options=None,
                n_jobs=1, xi_convention="total", keep_fits=True):
    """Fit every (model, K) cell and score it with AIC, BIC and SHC.

    All cells share the same fit options (in particular the seed) so that
    differences between cells reflect the models. Cells are processed and
    reported sorted by model name, then K. Failed fits are kept with their
    error message and excluded from the argmax.

    Parameters
    ----------
    coeffs : CoefficientMatrix or array of centered coefficients.
    W : Gram matrix of the basis.
    models : list of DfmModelSpec (or model names).
    K_range : iterable of cluster counts.
    criterion : the criterion reported first; all three are always computed.
    n_jobs : number of worker threads for the cells.
    xi_convention : ``"total"`` counts variance parameters, proportions and
        latent means; ``"variance"`` counts variance parameters only.

    Returns
    -------
    SelectionResult
    """
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    if xi_convention not in ("total", "variance"):
        raise ValueError("xi_convention must be 'total' or 'variance'")
    G = getattr(coeffs, "gamma", coeffs)
    G = np.asarray(G, float)
    models = [DfmModelSpec.from_name(m) if isinstance(m, str) else m for m in models]
    grid = sorted({(m.name, int(K)): m for m in models for K in K_range}.items())
    if not grid:
        raise ValueError("empty model grid")
    opts = dict(fit_options or {})
    jobs = [(G, W, m, K, opts) for (_, K), m in grid]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            cells = list(pool.map(_fit_cell, jobs))
    else:
        cells = [_fit_cell(j) for j in jobs]

    n = G.shape[0]
    ok = [c for c in cells if c.ok]
    if not ok:
        raise FitError("every grid cell failed: " + "; ".join(
            f"{c.model.name} K={c.K}: {c.error}" for c in cells))
    for c in ok:
        if xi_convention == "variance":
            c.xi = c.xi_variance
        c.scores["aic"] = aic(c.loglik, c.xi)
        c.scores["bic"] = bic(c.loglik, c.xi, n)
        if not keep_fits:
            c.fitted = None
    slope = None
    try:
        slope = slope_heuristic([c.xi for c in ok], [c.loglik for c in ok])
        for c, v in zip(ok, slope.shc):
            c.scores["shc"] = float(v)
    except ValueError as exc:
        log.info("slope heuristic unavailable: %s", exc)

    best = {}
    for crit in CRITERIA:
        scored = [c for c in ok if crit in c.scores]
        if scored:
            top = max(scored, key=lambda c: c.scores[crit])
            best[crit] = (top.model.name, top.K)
        else:
            best[crit] = None
    return SelectionResult(cells, n, best, slope, xi_convention)
