"""Kernel-based impulse-response identification built on generalized PSDs.

Submodules
----------
gpsd
    One-dimensional PSD shapes, continuous and discrete generalized PSDs.
kernels
    Kernel families, Gram matrices and spectral conversions.
features
    Finite feature expansions (grid and random) of GPSD kernels.
regression
    Gaussian-process posterior solvers and marginal-likelihood tuning.
analysis
    Pole density maps and modulated transforms.
harness
    Random systems, data synthesis, scoring and benchmarks.
estimators
    scikit-learn compatible wrappers.
"""

from . import analysis, exceptions, features, gpsd, harness, kernels, regression
from .analysis import dtft, modulated_dtft, pole_density_map, second_order_impulse
from .estimators import GpsdFeatureMap, KernelImpulseResponse
from .exceptions import GpsdkitError
from .features import FeatureExpansion, approx_error, feature_matrix, grid_expansion, random_expansion
from .gpsd import ContinuousGpsd, DiscreteGpsd, Psd1d, discretize, eval_continuous, total_power
from .harness import ExperimentConfig, SystemSpec, average_fit, random_system, run_benchmark, simulate, true_impulse
from .kernels import HyperParams, KernelModel, Kind, eval_kernel, gram, kernel_to_gpsd
from .regression import (
    DataRecord,
    KernelTemplate,
    OptBudget,
    build_regressor,
    fit_hyperparameters,
    negative_log_likelihood,
    posterior,
)

__version__ = "0.1.0"
