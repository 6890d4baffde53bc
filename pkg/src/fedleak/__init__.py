"""Secure federated-learning simulators and the attacks that invert them."""
from .errors import FedLeakError
from .recovery import (
    QuadraticSystem,
    RecoverabilityReport,
    SolutionSet,
    check_recoverability,
    cholesky_particular,
    constrained_dof,
    orthogonal_family_sample,
    quadratic_dof,
    recover_matrix,
    relative_error,
)

__version__ = "0.1.0"
