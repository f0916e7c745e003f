"""Semiparametric estimation for single-index mixed models on balanced panels."""

from .errors import (
    ConvergenceError,
    DataError,
    DegenerateAnchor,
    InsufficientLocalData,
    NonIdentifiableDirection,
    NumericalError,
    SimmError,
    UsageError,
)
from .gee import FitResult, KnownLink, build_V_inverse, evaluate_B, evaluate_Q, fit, objective, scoring_step
from .inference import (
    angle_error,
    assemble_A_hat,
    confidence_region,
    coordinate_intervals,
    cosine_alignment,
    pointwise_ci_g,
)
from .io import fit_report, ingest_csv, load_fit, write_csv
from .kernels import KERNELS, KernelSpec, get_kernel, kernel_moments
from .model import (
    BandwidthPolicy,
    FitConfig,
    IndexCoefficient,
    LongitudinalDataset,
    TrimmingWeight,
    VarianceComponents,
    normalize,
)
from .reparam import drop_component, jacobian, lift_component
from .simulation import SimulationConfig, generate, run_study
from .smoother import (
    LinkEstimate,
    LocalLinearSmoother,
    estimate_density,
    estimate_g1,
    local_linear,
    select_bandwidth,
    smoother_weights,
)
from .validation import ValidationReport, validate
from .variance import ResidualSet, estimate_variances

__version__ = "0.1.0"
