"""Choosing the number of clusters on simulated curves.

Simulates the four-cluster scenario A, smooths each draw on 25 Fourier
functions and scores K = 2..10 with BIC and the slope heuristic for two
models. Prints how often each K is selected.

    python3 demos/simulation_selection.py [runs]
"""
import sys
import warnings

from funfem.dfm import DfmModelSpec
from funfem.simulation import run_selection_experiment

warnings.simplefilter("ignore", RuntimeWarning)
runs = int(sys.argv[1]) if len(sys.argv) > 1 else 5

for model in (DfmModelSpec("full", "per_cluster"), DfmModelSpec("common_full", "per_cluster")):
    exp = run_selection_experiment("A", model, runs=runs, seed=0)
    print(f"{model.name}")
    print("  K      " + " ".join(f"{k:3d}" for k in exp["K"]))
    for crit in ("bic", "shc"):
        print(f"  {crit:6s} " + " ".join(f"{c:3d}" for c in exp["counts"][crit]))
