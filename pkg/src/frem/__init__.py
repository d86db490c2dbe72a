"""Forward-reverse Monte Carlo bridge estimation and EM fitting for
discrete-time Markov chains."""

from .bridge import (BridgeQuery, FrEstimate, ZVectorResult, estimate_bridge,
                     estimate_z_vector)
from .chain import (ChainModel, ForwardPath, ObservationSet,
                    path_loglikelihood, simulate_forward,
                    simulate_forward_batch)
from .em import (FremConfig, FremState, IterationRecord, SuffStatModel,
                 m_step, q_function, run_frem, run_frem_replicates,
                 stable_iterate)
from .errors import (ConfigError, DegenerateBridgeError,
                     EstimatorFailureError, FremError, MStepFailureError,
                     NonIntegrableStatisticError, ParameterDomainError,
                     UnsupportedModelError, WeightSingularityError)
from .kernels import KernelSpec, default_bandwidth, eval_kernel
from .pairsum import PairSumResult, fast_double_sum, naive_double_sum
from .reverse import (ReverseChainSpec, ReverseIdentityReport, ReversePath,
                      build_reverse, check_reverse_identity, simulate_reverse,
                      simulate_reverse_batch)
from .rng import substream

__version__ = "0.1.0"

__all__ = [
    "BridgeQuery", "ChainModel", "ConfigError", "DegenerateBridgeError",
    "EstimatorFailureError", "ForwardPath", "FrEstimate", "FremConfig",
    "FremError", "FremState", "IterationRecord", "KernelSpec",
    "MStepFailureError", "NonIntegrableStatisticError", "ObservationSet",
    "PairSumResult", "ParameterDomainError", "ReverseChainSpec",
    "ReverseIdentityReport", "ReversePath", "SuffStatModel",
    "UnsupportedModelError", "WeightSingularityError", "ZVectorResult",
    "build_reverse", "check_reverse_identity", "default_bandwidth",
    "estimate_bridge", "estimate_z_vector", "eval_kernel", "fast_double_sum",
    "m_step", "naive_double_sum", "path_loglikelihood", "q_function",
    "run_frem", "run_frem_replicates", "simulate_forward",
    "simulate_forward_batch", "simulate_reverse", "simulate_reverse_batch",
    "stable_iterate", "substream",
]
