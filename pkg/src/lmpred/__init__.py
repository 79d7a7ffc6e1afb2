"""Simulation, finite-past prediction and Monte Carlo checks for long-memory FARIMA processes."""

from .errors import (DomainError, ExperimentError, IllConditionedModelError, IndexContractError,
                     LmpredError, ParameterRangeError, SimulationInfeasibleError,
                     SingularCovarianceError, SingularMatrixError, TruncationContractError)
from .model import (CoeffSeries, ProcessSpec, ValidationReport, ar_coefficients, autocovariance,
                    ma_coefficients, spectral_density, validate_assumptions)
from .predict import (ErrorDecomposition, decompose_error, estimated_coefficients,
                      predict_same_realisation, predict_theoretical, predict_wiener_kolmogorov,
                      theoretical_coefficients)
from .simulate import SamplePath, sample, sample_batch, sample_with_innovations, split
from .toeplitz import (EmpiricalCov, PredictorCoeffs, ToeplitzCov, dense_solve, empirical_cov,
                       levinson_solve, theoretical_cov)

__version__ = "0.1.0"
