"""Command-line front end.

Subcommands::

    funfem fit      --input FILE --model NAME --k-min K --k-max K  ...
    funfem select   --input FILE --model NAME [--model NAME ...] --k-min 2 --k-max 10 --criterion shc
    funfem sparse   --input FILE --model NAME --k-min K --k-max K --lambda 0.1
    funfem simulate --scenario A --runs 20 --model NAME --criterion bic

Results are written to ``--out-dir``. Everything is first written to a
staging directory and moved into place only when the whole run succeeded,
so a failed run leaves no partial artifacts behind.

Exit status: 0 on success, 2 for an invalid configuration or unreadable
input, 3 when the model fit fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .algorithm import FitError, FittedModel, SparsityError, project, sparse_f_step
from .basis import (BasisError, BasisSpec, CoefficientMatrix, SmoothingError, bspline_basis,
                    eval_basis, fourier_basis, gram_matrix, smooth_curves)
from .dfm import DegenerateModelError, DfmModelSpec
from .io import InputFormatError, read_long_csv, write_rows
from .selection import CRITERIA, grid_search
from .simulation import run_selection_experiment, write_experiment_table

log = logging.getLogger("funfem")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_FIT = 0, 2, 3
BSS_PERIOD_HOURS = 168.0
N_SAMPLE_CURVES = 3


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending option."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class RunConfig:
    command: str
    out_dir: str
    input: Optional[str] = None
    fmt: str = "auto"
    basis: str = "fourier"
    p: int = 25
    period_hours: Optional[float] = None
    order: int = 4
    models: list = field(default_factory=lambda: ["DFM[Sigma_k,beta_k]"])
    k_min: int = 2
    k_max: int = 6
    criterion: str = "bic"
    lam: float = 0.1
    seed: int = 0
    restarts: int = 5
    tol: float = 1e-6
    max_iter: int = 100
    grid_points: int = 200
    scenario: str = "A"
    runs: int = 20
    n: int = 100
    variant: str = "corrected"
    threads: int = 1

    def validate(self):
        """Check every option before any computation; raise ConfigError."""
        if self.command not in ("fit", "select", "sparse", "simulate"):
            raise ConfigError("command", f"unknown command {self.command!r}")
        if not self.out_dir:
            raise ConfigError("out_dir", "an output directory is required")
        if self.command != "simulate":
            if not self.input:
                raise ConfigError("input", "an input file is required")
            if not os.path.isfile(self.input):
                raise ConfigError("input", f"no such file {self.input!r}")
        if self.fmt not in ("auto", "generic", "bss"):
            raise ConfigError("format", f"unknown format {self.fmt!r}")
        if self.basis not in ("fourier", "bspline"):
            raise ConfigError("basis", f"unknown basis {self.basis!r}")
        if self.p < 1:
            raise ConfigError("p", "must be positive")
        if self.basis == "fourier" and self.p % 2 == 0:
            raise ConfigError("p", "a Fourier basis needs an odd number of functions")
        if self.basis == "bspline" and not 1 <= self.order <= self.p:
            raise ConfigError("order", "B-spline order must lie in [1, p]")
        if self.period_hours is not None and not self.period_hours > 0:
            raise ConfigError("period_hours", "must be positive")
        if not self.models:
            raise ConfigError("model", "at least one model is required")
        parsed = []
        for name in self.models:
            try:
                parsed.append(DfmModelSpec.from_name(name))
            except ValueError as exc:
                raise ConfigError("model", str(exc)) from None
        self.models = parsed
        if self.k_min < 2:
            raise ConfigError("k_min", "must be at least 2")
        if self.k_max < self.k_min:
            raise ConfigError("k_max", "must be at least k_min")
        if self.k_max > self.p:
            raise ConfigError("k_max", f"needs K - 1 < p = {self.p}")
        if self.command in ("fit", "sparse"):
            if len(self.models) != 1:
                raise ConfigError("model", f"{self.command} takes exactly one model")
            if self.k_min != self.k_max:
                raise ConfigError("k_max", f"{self.command} takes a single K (k_min == k_max)")
        if self.criterion not in CRITERIA:
            raise ConfigError("criterion", f"unknown criterion {self.criterion!r}")
        if self.command == "select" and self.criterion == "shc":
            n_cells = len(self.models) * (self.k_max - self.k_min + 1)
            if n_cells < 4:
                raise ConfigError("criterion", "the slope heuristic needs at least 4 grid cells")
        if self.lam < 0:
            raise ConfigError("lambda", "must be non-negative")
        if self.restarts < 1:
            raise ConfigError("restarts", "must be at least 1")
        if not self.tol > 0:
            raise ConfigError("tol", "must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter", "must be at least 1")
        if self.grid_points < 2:
            raise ConfigError("grid_points", "must be at least 2")
        if self.scenario not in ("A", "B"):
            raise ConfigError("scenario", "must be A or B")
        if self.runs < 1:
            raise ConfigError("runs", "must be at least 1")
        if self.n < 4:
            raise ConfigError("n", "must be at least 4")
        if self.variant not in ("corrected", "printed"):
            raise ConfigError("variant", "must be 'corrected' or 'printed'")
        if self.threads < 1:
            raise ConfigError("threads", "must be at least 1")
        return self

    @property
    def fit_options(self):
        return {"seed": self.seed, "n_restarts": self.restarts, "tol": self.tol,
                "max_iter": self.max_iter}


def _threads():
    raw = os.environ.get("FUNFEM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError("FUNFEM_THREADS", f"not an integer: {raw!r}") from None


def _build_basis(cfg, curves, fmt):
    lo, hi = curves.domain
    period = cfg.period_hours
    if period is None and fmt == "bss":
        period = BSS_PERIOD_HOURS
    if cfg.basis == "fourier":
        return fourier_basis(cfg.p, (lo, hi), period=period)
    return bspline_basis(cfg.p, (lo, hi), order=cfg.order)


def export_plot_data(fitted, coeffs, W, grid, out_dir, ids=None, cities=None,
                     selection=None):
    """Write the plot-ready files of a fitted model.

    * ``means.csv``: cluster mean curves on ``grid`` (long format);
    * ``sample_curves.csv``: the first three curves of each cluster on ``grid``;
    * ``subspace.csv``: discriminative coordinates of every curve;
    * ``subspace_by_city.csv``: the same coordinates tagged by city (when known);
    * ``criteria.csv``: loglik, xi and criteria per grid cell (when a selection
      is given).

    Output depends only on its arguments, so re-exporting a saved model gives
    byte-identical files.
    """
    grid = np.asarray(grid, float)
    basis = coeffs.basis
    theta = eval_basis(basis, grid)
    labels = fitted.labels
    ids = list(coeffs.ids) if ids is None and coeffs.ids is not None else ids
    if ids is None:
        ids = [str(i) for i in range(coeffs.n)]
    offset = coeffs.mean_coeffs if coeffs.centered else np.zeros(coeffs.p)

    mean_curves = (fitted.params.means + offset) @ theta.T
    write_rows(os.path.join(out_dir, "means.csv"), ["cluster", "time", "value"],
               ((k + 1, float(t), float(v)) for k in range(fitted.K)
                for t, v in zip(grid, mean_curves[k])))

    rows = []
    for k in range(fitted.K):
        members = np.flatnonzero(labels == k)[:N_SAMPLE_CURVES]
        if members.size:
            curves = (coeffs.gamma[members] + offset) @ theta.T
            for i, curve in zip(members, curves):
                rows.extend((k + 1, ids[i], float(t), float(v)) for t, v in zip(grid, curve))
    write_rows(os.path.join(out_dir, "sample_curves.csv"),
               ["cluster", "id", "time", "value"], rows)

    coords = project(coeffs, fitted.subspace, W)
    dims = [f"dim{j + 1}" for j in range(coords.shape[1])]
    write_rows(os.path.join(out_dir, "subspace.csv"), ["id"] + dims,
               ([ids[i]] + [float(x) for x in coords[i]] for i in range(coeffs.n)))
    if cities is not None:
        order = sorted(range(coeffs.n), key=lambda i: (cities[i], i))
        write_rows(os.path.join(out_dir, "subspace_by_city.csv"),
                   ["city", "id", "cluster"] + dims,
                   ([cities[i], ids[i], int(labels[i]) + 1] + [float(x) for x in coords[i]]
                    for i in order))
    if selection is not None:
        write_rows(os.path.join(out_dir, "criteria.csv"),
                   ["model", "K", "xi", "loglik", "aic", "bic", "shc"],
                   ([c.model.name, c.K, c.xi, c.loglik] +
                    [c.scores.get(k, float("nan")) for k in CRITERIA]
                    for c in selection.cells if c.ok))


def _write_fit(fitted, coeffs, W, grid, out_dir, ids, cities, selection, input_meta):
    T = fitted.posteriors.T
    labels = fitted.labels
    if len(set(labels.tolist())) != fitted.K:
        raise FitError(f"{fitted.model.name}: a cluster is empty after the MAP assignment")
    write_rows(os.path.join(out_dir, "assignments.csv"), ["id", "cluster", "max_posterior"],
               ((ids[i], int(labels[i]) + 1, float(T[i].max())) for i in range(fitted.n)))
    write_rows(os.path.join(out_dir, "posteriors.csv"),
               ["id"] + [f"cluster{k + 1}" for k in range(fitted.K)],
               ([ids[i]] + [float(x) for x in T[i]] for i in range(fitted.n)))
    names = coeffs.basis.names()
    U = fitted.subspace.U
    write_rows(os.path.join(out_dir, "loadings.csv"),
               ["basis_function"] + [f"u{j + 1}" for j in range(U.shape[1])] + ["zero"],
               ([names[r]] + [float(x) for x in U[r]] + [int(not np.any(U[r] != 0))]
                for r in range(U.shape[0])))
    export_plot_data(fitted, coeffs, W, grid, out_dir, ids, cities, selection)
    doc = {"schema_version": SCHEMA_VERSION, "basis": coeffs.basis.to_dict(),
           "n": coeffs.n, "p": coeffs.p, "coefficients": coeffs.gamma.tolist(),
           "mean_coeffs": coeffs.mean_coeffs.tolist(), "centered": coeffs.centered,
           "ids": list(ids), "cities": cities, "input": input_meta,
           "fitted": fitted.to_dict()}
    with open(os.path.join(out_dir, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Read a ``model.json`` written by the CLI.

    Returns
    -------
    (FittedModel, CoefficientMatrix, ids, cities)
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model.json schema {doc.get('schema_version')!r}")
    basis = BasisSpec.from_dict(doc["basis"])
    coeffs = CoefficientMatrix(np.array(doc["coefficients"], float).reshape(doc["n"], doc["p"]),
                               basis, np.array(doc["mean_coeffs"]), doc["centered"], doc["ids"])
    return FittedModel.from_dict(doc["fitted"]), coeffs, doc["ids"], doc.get("cities")


def _analyse(cfg, stage):
    loaded = read_long_csv(cfg.input, cfg.fmt)
    curves = loaded.curves
    basis = _build_basis(cfg, curves, loaded.fmt)
    coeffs = smooth_curves(curves, basis, center=True)
    W = gram_matrix(basis)
    K_range = range(cfg.k_min, cfg.k_max + 1)
    log.info("%d curves, %s basis with p=%d", curves.n, basis.kind, basis.p)
    res = grid_search(coeffs, W, cfg.models, K_range, criterion=cfg.criterion,
                      fit_options=cfg.fit_options, n_jobs=cfg.threads)
    res.to_csv(os.path.join(stage, "selection.csv"))
    criterion = cfg.criterion if res.best.get(cfg.criterion) is not None else "bic"
    cell = res.best_cell(criterion)
    fitted = cell.fitted
    if cfg.command == "sparse":
        sub = sparse_f_step(coeffs, W, fitted.posteriors, lam=cfg.lam,
                            warm_start=fitted.subspace)
        fitted = FittedModel(fitted.params, fitted.posteriors, sub, fitted.loglik_trace,
                              fitted.converged, fitted.n_iter, fitted.model, fitted.restart,
                              fitted.failures)
        log.info("sparse loadings: %d of %d basis functions kept",
                 int(sub.selected.sum()), basis.p)
    lo, hi = curves.domain
    grid = np.linspace(lo, hi, cfg.grid_points)
    ids = curves.ids
    meta = {"path": os.path.basename(cfg.input), "format": loaded.fmt,
            "origin_epoch_seconds": loaded.origin, "criterion": criterion,
            "lambda": cfg.lam if cfg.command == "sparse" else 0.0}
    _write_fit(fitted, coeffs, W, grid, stage, ids, loaded.cities,
               res if len(res.cells) > 1 else None, meta)
    log.info("selected %s with K=%d (%s)", fitted.model.name, fitted.K, criterion)


def _simulate(cfg, stage):
    K_range = range(cfg.k_min, cfg.k_max + 1)
    criteria = tuple(dict.fromkeys([cfg.criterion, "bic", "shc"]))
    exps = []
    for model in cfg.models:
        exp = run_selection_experiment(cfg.scenario, model, cfg.runs, K_range, criteria,
                                       seed=cfg.seed, n=cfg.n, p=cfg.p, variant=cfg.variant,
                                       fit_options={"n_restarts": cfg.restarts,
                                                    "tol": cfg.tol, "max_iter": cfg.max_iter})
        exps.append(exp)
    for crit in criteria:
        write_experiment_table(os.path.join(stage, f"simulation_{crit}.csv"), exps, crit)
    runs = [[e["model"], r + 1, cfg.seed + r] + [e["selected"][c][r] for c in criteria]
            for e in exps for r in range(cfg.runs)]
    write_rows(os.path.join(stage, "simulation_runs.csv"),
               ["model", "run", "seed"] + [f"K_{c}" for c in criteria], runs)


def run(cfg):
    """Execute a validated RunConfig; return the process exit status."""
    try:
        cfg.validate()
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    os.makedirs(cfg.out_dir, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".staging-", dir=cfg.out_dir)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if cfg.command == "simulate":
                _simulate(cfg, stage)
            else:
                _analyse(cfg, stage)
        for name in sorted(os.listdir(stage)):
            os.replace(os.path.join(stage, name), os.path.join(cfg.out_dir, name))
        return EXIT_OK
    except (InputFormatError, BasisError, SmoothingError, OSError) as exc:
        log.error("input error: %s", exc)
        return EXIT_CONFIG
    except (FitError, SparsityError, DegenerateModelError, np.linalg.LinAlgError) as exc:
        log.error("fit failed: %s", exc)
        return EXIT_FIT
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="funfem",
                                     description="Clustering of functional data with DFM models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", action="append", dest="models", metavar="NAME",
                       help="model name such as 'DFM[Sigma_k,beta_k]' (repeatable)")
        p.add_argument("--k-min", type=int, default=None)
        p.add_argument("--k-max", type=int, default=None)
        p.add_argument("--criterion", choices=CRITERIA, default="bic")
        p.add_argument("--p", type=int, default=None, help="number of basis functions")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--restarts", type=int, default=5)
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--max-iter", type=int, default=100)
        p.add_argument("--out-dir", required=True)
        p.add_argument("-v", "--verbose", action="store_true")

    for name in ("fit", "select", "sparse"):
        p = sub.add_parser(name)
        p.add_argument("--input", required=True)
        p.add_argument("--format", choices=("auto", "generic", "bss"), default="auto")
        p.add_argument("--basis", choices=("fourier", "bspline"), default="fourier")
        p.add_argument("--order", type=int, default=4, help="B-spline order (4 = cubic)")
        p.add_argument("--period-hours", type=float, default=None,
                       help="Fourier period; 168 (one week) by default for bike-sharing data")
        p.add_argument("--lambda", dest="lam", type=float, default=0.1)
        p.add_argument("--grid-points", type=int, default=200)
        common(p)
    p = sub.add_parser("simulate")
    p.add_argument("--scenario", choices=("A", "B"), default="A")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--variant", choices=("corrected", "printed"), default="corrected")
    common(p)
    return parser


def config_from_args(args):
    cfg = RunConfig(command=args.command, out_dir=args.out_dir)
    for name in ("input", "order", "period_hours", "lam", "grid_points", "scenario", "runs",
                 "n", "variant", "criterion", "seed", "restarts", "tol", "max_iter"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if hasattr(args, "format"):
        cfg.fmt = args.format
    if hasattr(args, "basis"):
        cfg.basis = args.basis
    if args.p is not None:
        cfg.p = args.p
    if args.models:
        cfg.models = list(args.models)
    if args.k_min is not None:
        cfg.k_min = args.k_min
    if args.k_max is not None:
        cfg.k_max = args.k_max
    elif args.k_min is not None and args.command in ("fit", "sparse"):
        cfg.k_max = args.k_min
    if args.k_min is None and args.k_max is not None and args.command in ("fit", "sparse"):
        cfg.k_min = args.k_max
    if args.command == "simulate" and args.k_min is None and args.k_max is None:
        cfg.k_min, cfg.k_max = 2, 10
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        cfg.threads = _threads()
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
