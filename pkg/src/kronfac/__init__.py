"""Kronecker-factored approximate curvature for feed-forward networks."""

from .averaging import polyak_average
from .factors import FactorSet, batch_moments, decay, update_running
from .fisher import dense_fisher, fisher_vec, jacobian_vec, quad_model, quad_scalars, reduction_ratio
from .kron import (DampingWarning, SingularSystemError, blockdiag_apply, blockdiag_build,
                   stein_solve, stein_solve_scaled, tridiag_apply, tridiag_build)
from .net import MLP, Architecture, TransformedMLP, TransformSpec, devec, init_sparse, transform, vec
from .optimizer import (KFAC, BatchSchedule, NumericalError, OptimizerConfig, StepReport,
                        adapt_lambda, batch_size, gamma_candidates, momentum_solve, propose,
                        rescale)

__version__ = "0.1.0"

__all__ = [
    "Architecture", "BatchSchedule", "DampingWarning", "FactorSet", "KFAC", "MLP",
    "NumericalError", "OptimizerConfig", "SingularSystemError", "StepReport",
    "TransformSpec", "TransformedMLP", "adapt_lambda", "batch_moments", "batch_size",
    "blockdiag_apply", "blockdiag_build", "decay", "dense_fisher", "devec", "fisher_vec",
    "gamma_candidates", "init_sparse", "jacobian_vec", "momentum_solve", "polyak_average",
    "propose", "quad_model", "quad_scalars", "reduction_ratio", "rescale", "stein_solve",
    "stein_solve_scaled", "transform", "tridiag_apply", "tridiag_build", "update_running",
    "vec",
]
