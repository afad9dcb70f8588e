"""Second-order training toolkit: Kronecker-factored natural gradients
with norm-scaled or explicit gradient regularization, a diagonal
regularized-Kalman trainer, and brute-force oracles that check every
approximation the fast paths make.
"""

from .backend import BACKEND
from .fisher import DampingMode, FisherFactors
from .kalman import GaussianPosterior, KalmanConfig, ObservationNoise, RKalmanOptimizer
from .linalg import NewtonConfig
from .model import Network, forward, init_network
from .optim import OptimizerConfig, StepReport, make_optimizer
from .train import RunConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DampingMode",
    "FisherFactors",
    "GaussianPosterior",
    "KalmanConfig",
    "Network",
    "NewtonConfig",
    "ObservationNoise",
    "OptimizerConfig",
    "RKalmanOptimizer",
    "RunConfig",
    "StepReport",
    "forward",
    "init_network",
    "make_optimizer",
    "train",
    "__version__",
]
