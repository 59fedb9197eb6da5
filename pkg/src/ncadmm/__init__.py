"""Linearized nonconvex ADMM with quantile-regression and spectral-CT instantiations."""

from . import diagnostics, engine, numerics, prox, quantile
from .engine import AdmmProblem, AdmmState, CompositeObjective, admm_step, run

__version__ = "0.1.0"

__all__ = [
    "numerics",
    "prox",
    "engine",
    "quantile",
    "diagnostics",
    "AdmmProblem",
    "AdmmState",
    "CompositeObjective",
    "admm_step",
    "run",
    "__version__",
]
