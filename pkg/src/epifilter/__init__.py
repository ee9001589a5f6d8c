"""Ensemble Kalman filters with spectral covariances and morphing for a
stochastic spatial S-I-R epidemic model."""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, parse_config
from .enkf import ObsSpec, dense_analysis, perturb_data, sample_covariance
from .experiment import (
    CycleReport,
    centroid_error,
    postprocess,
    run_cycle,
    run_experiment,
    synthesize_data,
    to_fraction,
)
from .fft_enkf import fft_enkf_analysis, spectral_cross_covariance, spectral_variance
from .grid import Ensemble, Grid, ModelState, ensemble_mean, make_grid, total_population
from .morphing import (
    MorphObsParams,
    MorphState,
    RegistrationOptions,
    WarpMapping,
    initial_ensemble,
    invert_mapping,
    morph_inverse,
    morph_transform,
    morphing_analysis,
    random_smooth_mapping,
    register,
    warp,
)
from .sir import EpiParams, advance, infection_intensity, step_stochastic, weight
from .spectral import SmoothnessSpec, dst2_forward, dst2_inverse, random_smooth_field

__all__ = [
    "CycleReport",
    "Ensemble",
    "EpiParams",
    "ExperimentConfig",
    "Grid",
    "ModelState",
    "MorphObsParams",
    "MorphState",
    "ObsSpec",
    "RegistrationOptions",
    "SmoothnessSpec",
    "WarpMapping",
    "advance",
    "centroid_error",
    "dense_analysis",
    "dst2_forward",
    "dst2_inverse",
    "ensemble_mean",
    "fft_enkf_analysis",
    "infection_intensity",
    "initial_ensemble",
    "invert_mapping",
    "load_config",
    "make_grid",
    "morph_inverse",
    "morph_transform",
    "morphing_analysis",
    "parse_config",
    "perturb_data",
    "postprocess",
    "random_smooth_field",
    "random_smooth_mapping",
    "register",
    "run_cycle",
    "run_experiment",
    "sample_covariance",
    "spectral_cross_covariance",
    "spectral_variance",
    "step_stochastic",
    "synthesize_data",
    "to_fraction",
    "total_population",
    "warp",
    "weight",
]
