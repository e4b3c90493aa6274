"""Simulated functional clustering scenarios and clustering accuracy.

Both scenarios draw n curves from 4 equiprobable clusters observed at the 101
points t = 1, 1.2, ..., 21, with a fresh U ~ Uniform[0, 1] per curve and
i.i.d. Gaussian noise of variance 0.5:

* scenario A: U + (1-U) h1, U + (1-U) h2, U + (0.5-U) h1 and, for cluster 4,
  U + (0.5-U) h2 (``variant="corrected"``, default) or a repeat of cluster 3
  (``variant="printed"``);
* scenario B: U + (1-U) h1, U + (1-U) h2, U + (1-U) cos(2t), U + (1-U) sin(2t-2);

with h1(t) = 6 - |t - 7| and h2(t) = 6 - |t - 15|.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .basis import SampledCurveSet, fourier_basis, gram_matrix, smooth_curves

N_CLUSTERS = 4
NOISE_VAR = 0.5
TIME_GRID = (5 + np.arange(101)) / 5.0  # 1.0, 1.2, ..., 21.0


def h1(t):
    return 6.0 - np.abs(t - 7.0)


def h2(t):
    return 6.0 - np.abs(t - 15.0)


def _scenario_a(variant):
    if variant not in ("corrected", "printed"):
        raise ValueError(f"unknown scenario A variant {variant!r}")
    last = h2 if variant == "corrected" else h1
    return [lambda t, u: u + (1 - u) * h1(t),
            lambda t, u: u + (1 - u) * h2(t),
            lambda t, u: u + (0.5 - u) * h1(t),
            lambda t, u: u + (0.5 - u) * last(t)]


_SCENARIO_B = [lambda t, u: u + (1 - u) * h1(t),
               lambda t, u: u + (1 - u) * h2(t),
               lambda t, u: u + (1 - u) * np.cos(2 * t),
               lambda t, u: u + (1 - u) * np.sin(2 * t - 2)]


@dataclass(frozen=True)
class SimulatedDataset:
    curves: SampledCurveSet
    scenario: str
    seed: int
    variant: str = "corrected"

    @property
    def n(self):
        return self.curves.n

    @property
    def labels(self):
        return self.curves.labels

    def values(self):
        """(n, 101) matrix of the simulated observations."""
        return np.vstack(self.curves.values)


def _simulate(generators, n, seed, noise_var, u_value):
    if n < N_CLUSTERS:
        raise ValueError("n must be at least 4")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, N_CLUSTERS, size=n)
    u = rng.uniform(0.0, 1.0, size=n) if u_value is None else np.full(n, float(u_value))
    noise = rng.normal(0.0, np.sqrt(noise_var), size=(n, TIME_GRID.size))
    X = np.empty((n, TIME_GRID.size))
    for k, gen in enumerate(generators):
        idx = labels == k
        X[idx] = gen(TIME_GRID[None, :], u[idx, None])
    X += noise
    ids = [f"curve{i:05d}" for i in range(n)]
    return SampledCurveSet.from_grid(TIME_GRID, X, labels=labels, ids=ids)


def simulate_scenario_a(n=100, seed=0, variant="corrected", noise_var=NOISE_VAR, u_value=None):
    """Triangle-shaped scenario used for selecting the number of clusters.

    ``noise_var`` and ``u_value`` override the noise variance and pin U for
    testing; labels are 0-based cluster indices.
    """
    curves = _simulate(_scenario_a(variant), n, seed, noise_var, u_value)
    return SimulatedDataset(curves, "A", seed, variant)


def simulate_scenario_b(n=100, seed=0, noise_var=NOISE_VAR, u_value=None):
    """Two-frequency scenario used for discriminative basis selection."""
    curves = _simulate(_SCENARIO_B, n, seed, noise_var, u_value)
    return SimulatedDataset(curves, "B", seed, "printed")


def _contingency(pred, truth):
    _, p_idx = np.unique(pred, return_inverse=True)
    _, t_idx = np.unique(truth, return_inverse=True)
    C = np.zeros((p_idx.max() + 1, t_idx.max() + 1), dtype=int)
    np.add.at(C, (p_idx, t_idx), 1)
    return C


def clustering_accuracy(pred, truth):
    """Percentage of curves correctly labelled under the best label matching.

    Exhaustive search over label permutations up to 8 groups, the Hungarian
    algorithm beyond.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have the same length")
    if pred.size == 0:
        raise ValueError("empty label vectors")
    C = _contingency(pred, truth)
    m = max(C.shape)
    if m > 12:
        raise ValueError("at most 12 distinct labels are supported")
    S = np.zeros((m, m), dtype=int)
    S[:C.shape[0], :C.shape[1]] = C
    if m <= 8:
        rows = np.arange(m)
        best = max(S[rows, perm].sum() for perm in itertools.permutations(range(m)))
    else:
        r, c = linear_sum_assignment(-S)
        best = S[r, c].sum()
    return 100.0 * best / pred.size


def run_selection_experiment(scenario="A", model=None, runs=100, K_range=range(2, 11),
                             criteria=("bic", "shc"), seed=0, n=100, p=25,
                             variant="corrected", fit_options=None):
    """Monte-Carlo tally of the number of clusters picked by each criterion.

    Each run simulates ``n`` curves (seed ``seed + run``), smooths them on a
    ``p``-function Fourier basis and grid-searches K for ``model``.

    Returns
    -------
    dict
        ``{"K": [...], "counts": {criterion: [count per K]}, "selected":
        {criterion: [K per run]}, "failures": int}``.
    """
    from .dfm import DfmModelSpec
    from .selection import grid_search

    model = DfmModelSpec() if model is None else model
    K_values = list(K_range)
    selected = {c: [] for c in criteria}
    failures = 0
    for run in range(runs):
        if scenario == "A":
            data = simulate_scenario_a(n, seed + run, variant=variant)
        elif scenario == "B":
            data = simulate_scenario_b(n, seed + run)
        else:
            raise ValueError(f"unknown scenario {scenario!r}")
        basis = fourier_basis(p, (TIME_GRID[0], TIME_GRID[-1]))
        coeffs = smooth_curves(data.curves, basis, center=True)
        res = grid_search(coeffs, gram_matrix(basis), [model], K_values,
                          fit_options=dict(fit_options or {}, seed=seed + run))
        failures += sum(1 for cell in res.cells if not cell.ok)
        for c in criteria:
            selected[c].append(res.best[c][1])
    counts = {c: [selected[c].count(K) for K in K_values] for c in criteria}
    return {"model": model.name, "K": K_values, "counts": counts,
            "selected": selected, "failures": failures, "runs": runs}


def write_experiment_table(path, experiments, criterion):
    """Write selected-K counts as a table: one row per model, one column per K."""
    K_values = experiments[0]["K"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model"] + [str(K) for K in K_values])
        for exp in experiments:
            if exp["K"] != K_values:
                raise ValueError("all experiments must share the same K range")
            w.writerow([exp["model"]] + exp["counts"][criterion])


def write_synthetic_bss_csv(path, n_stations=3230, n_times=1448, K=10, seed=0,
                            cities=("Paris", "Lyon", "Marseille", "Toulouse"),
                            start=1_700_000_000, hours=168.0, jitter_seconds=60):
    """Write a bike-sharing long CSV of the requested shape.

    Each station follows one of ``K`` weekly loading patterns (a daily and a
    weekly harmonic with pattern-specific phases) plus noise; counts are
    rounded to an integer number of bikes out of a random dock capacity.
    Station timestamps are jittered independently by up to
    ``jitter_seconds`` so that sampling grids differ between stations.

    Returns the true pattern of each station (0-based).
    """
    rng = np.random.default_rng(seed)
    step = hours * 3600.0 / n_times
    base = start + step * np.arange(n_times)
    hrs = (base - start) / 3600.0
    daily_phase = rng.uniform(0, 2 * np.pi, K)
    weekly_phase = rng.uniform(0, 2 * np.pi, K)
    level = rng.uniform(0.3, 0.7, K)
    patterns = (level[:, None]
                + 0.2 * np.sin(2 * np.pi * hrs / 24.0 + daily_phase[:, None])
                + 0.1 * np.sin(2 * np.pi * hrs / 168.0 + weekly_phase[:, None]))
    truth = rng.integers(0, K, n_stations)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("station_id,city,timestamp,bikes,docks\n")
        for s in range(n_stations):
            docks = int(rng.integers(10, 60))
            load = np.clip(patterns[truth[s]] + rng.normal(0, 0.08, n_times), 0, 1)
            bikes = np.rint(load * docks).astype(int)
            ts = np.rint(base + rng.uniform(-jitter_seconds, jitter_seconds, n_times)).astype(np.int64)
            prefix = f"S{s:05d},{cities[s % len(cities)]},"
            fh.write("".join(f"{prefix}{t},{b},{docks}\n" for t, b in zip(ts.tolist(), bikes.tolist())))
    return truth
