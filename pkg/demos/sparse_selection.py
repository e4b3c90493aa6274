"""Reading off which Fourier harmonics discriminate the clusters.

Scenario B mixes two piecewise-linear shapes with cos(2t) and a shifted
sin(2t). After an unpenalized fit, an l1-penalized subspace is estimated for
several penalties and the basis functions with non-zero loadings are listed.

    python3 demos/sparse_selection.py [seed]
"""
import sys
import warnings

import numpy as np

from funfem.algorithm import fit, sparse_f_step
from funfem.basis import fourier_basis, gram_matrix, smooth_curves
from funfem.simulation import clustering_accuracy, simulate_scenario_b

warnings.simplefilter("ignore", RuntimeWarning)
seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

data = simulate_scenario_b(100, seed=seed)
basis = fourier_basis(25, (1, 21))
W = gram_matrix(basis)
coeffs = smooth_curves(data.curves, basis)
fitted = fit(coeffs, W, 4, seed=seed)
print(f"accuracy of the dense fit: {clustering_accuracy(fitted.labels, data.labels):.0f}%")

names = np.array(basis.names())
omega = basis.angular_frequencies()
for lam in (0.02, 0.05, 0.1, 0.2):
    sub = sparse_f_step(coeffs, W, fitted.posteriors, lam=lam, warm_start=fitted.subspace)
    kept = ", ".join(f"{n} (omega={w:.2f})" for n, w in zip(names[sub.selected],
                                                            omega[sub.selected]))
    print(f"lambda={lam:<5} zeros={sub.zero_fraction:.0%}  kept: {kept}")
