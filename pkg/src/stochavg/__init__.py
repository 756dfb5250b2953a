"""Numerical laboratory for weak averaging of semilinear stochastic
evolution equations with quasi-periodic coefficients."""
from .hilbert import GalerkinModel, nuclear_norm, sample_wiener_increments, semigroup_apply
from .coefficients import (
    AveragedCoefficients,
    QuasiPeriodicDiffusion,
    QuasiPeriodicDrift,
    averaged_diffusion,
    build_averaged,
    eval_diffusion,
    eval_drift,
    lipschitz_certificate,
    sqrt_psd,
)
from .analysis import compute_constants, novikov_constant
from .solver import PathEnsemble, SolverConfig, integrate_path, simulate_ensemble
from .metrics import empirical_w2, gaussian_w2
from .kernels import BACKEND

__version__ = "0.1.0"
