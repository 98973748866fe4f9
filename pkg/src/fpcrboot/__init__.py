"""Inference for functional linear regression with scalar response.

FPCR estimation, a bias-corrected paired bootstrap for projections
``<beta, x0>``, bootstrap tests of orthogonality to target curves, and a
Monte Carlo harness for the corresponding simulation designs.
"""

from ._kernels import BACKEND
from .bootstrap import (
    BootstrapConfig,
    BootstrapReport,
    ReplicateStat,
    clt_interval,
    confidence_interval,
    construction_bias,
    naive_replicate,
    pb_replicate,
    resample_pairs,
    residual_replicate,
    sigma_tau,
)
from .dgp import DgpSpec, GeneratedSample, default_k, fourier_basis, gen_dataset, spectrum_from_gaps
from .errors import (
    DataValidationError,
    DimensionError,
    DomainError,
    ExperimentAborted,
    FpcrError,
    IntervalError,
    InvalidOperatorError,
    TruncationError,
)
from .flrm import (
    EigenSystem,
    FpcrFit,
    FunctionalDataset,
    SpectralModel,
    TuningChoice,
    center,
    cross_covariance,
    cv_select_k,
    eigendecompose,
    fpcr_fit,
    lambda_hat,
    rule_of_thumb,
    sample_covariance,
    scaling_s_hat,
    spectral_model,
    truncated_inverse_apply,
    u_hat,
)
from .hilbert import Curve, Grid, LinearOperator, apply, inner_product, norm, tensor_product
from .hypothesis import TargetSet, TestResult, bootstrap_test, null_enforced_dataset, observed_statistics, project_onto_span
from .seeding import stream

__version__ = "0.1.0"
