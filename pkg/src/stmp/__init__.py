"""Turbo message passing for compressive recovery with score-based denoisers."""

from .denoisers import (
    DenoiserOutput,
    DivergenceEstimatorConfig,
    ExternalDenoiserClient,
    denoise_tweedie,
    tweedie_denoiser,
    variance_divergence,
    variance_residual,
)
from .msgpass import Message, RunTrace, StmpConfig, extrinsic, lmmse_update, run_stmp, run_tmp
from .operators import LinearModel, MeasurementOperator, adjoint, forward, make_operator, sample_model
from .priors import (
    BernoulliGaussianPrior,
    GaussianPrior,
    GmmPrior,
    mmse_oracle,
    score_first,
    score_second_trace,
)
from .quantizer import QuantizedModel, QuantizerSpec, dequantize_mmse, quantize, run_qstmp
from .state_evolution import MseTable, SETrace, build_mse_table, mse_function, run_se_qstmp, run_se_stmp, theta

__version__ = "0.1.0"

__all__ = [
    "BernoulliGaussianPrior",
    "DenoiserOutput",
    "DivergenceEstimatorConfig",
    "ExternalDenoiserClient",
    "GaussianPrior",
    "GmmPrior",
    "LinearModel",
    "MeasurementOperator",
    "Message",
    "MseTable",
    "QuantizedModel",
    "QuantizerSpec",
    "RunTrace",
    "SETrace",
    "StmpConfig",
    "adjoint",
    "build_mse_table",
    "denoise_tweedie",
    "dequantize_mmse",
    "extrinsic",
    "forward",
    "lmmse_update",
    "make_operator",
    "mmse_oracle",
    "mse_function",
    "quantize",
    "run_qstmp",
    "run_se_qstmp",
    "run_se_stmp",
    "run_stmp",
    "run_tmp",
    "sample_model",
    "score_first",
    "score_second_trace",
    "theta",
    "tweedie_denoiser",
    "variance_divergence",
    "variance_residual",
]
