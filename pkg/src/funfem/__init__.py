"""Model-based clustering of functional data in a discriminative subspace."""
from .basis import (BasisSpec, CoefficientMatrix, SampledCurveSet, bspline_basis,
                    eval_basis, fourier_basis, gram_matrix, reconstruct, smooth_curves)
from .dfm import (ALL_MODELS, DfmModelSpec, DfmParams, cluster_log_densities,
                  constrain_covariance, free_parameter_count, param_count)
from .algorithm import (DiscriminativeSubspace, FitError, FittedModel, PosteriorMatrix,
                        e_step, f_step, fit, initialize, m_step, project, sparse_f_step)
from .selection import aic, bic, grid_search, slope_heuristic
from .simulation import (clustering_accuracy, run_selection_experiment,
                         simulate_scenario_a, simulate_scenario_b)

__version__ = "0.1.0"
