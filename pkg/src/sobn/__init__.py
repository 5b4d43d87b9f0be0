"""Second-order inference for discrete Bayesian networks with Dirichlet parameters."""

from .bp import run_bp
from .exact import enumerate_query, learn_dirichlet, monte_carlo_second_order
from .model import ConcreteNetwork, MarginalEstimate, NetworkStructure, UncertainNetwork
from .solbp import run_solbp
from .spn import compile_spn, sospn_query

__version__ = "0.1.0"

__all__ = [
    "ConcreteNetwork",
    "MarginalEstimate",
    "NetworkStructure",
    "UncertainNetwork",
    "compile_spn",
    "enumerate_query",
    "learn_dirichlet",
    "monte_carlo_second_order",
    "run_bp",
    "run_solbp",
    "sospn_query",
]
