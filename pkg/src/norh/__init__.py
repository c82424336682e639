"""Failure-probability estimation with surrogate-accelerated Monte Carlo."""

from .hybrid import HybridConfig, HybridResult, estimate_gamma_n, hybrid_iterate, mcs_estimate
from .models import (
    ExternalProcessModel,
    Helmholtz1dModel,
    LimitStateModel,
    MultivariateLinearModel,
    OdeDecayModel,
    analytic_failure_probability,
    external_model,
)
from .stochastic import (
    RandomVectorSpec,
    SampleMatrix,
    gaussian_cdf,
    sample_gaussian,
    sample_random_vector,
)
from .surrogate import (
    InputFunctionParams,
    NeuralSurrogate,
    OperatorSurrogate,
    build_input_function,
    generate_operator_dataset,
    surrogate_mcs,
    train_neural_surrogate,
    train_operator_surrogate,
)

__version__ = "0.1.0"
