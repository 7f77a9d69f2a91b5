"""Hidden Markov models with sparse Gaussian graphical emissions."""
from .core import fit_em, forward_backward, m_step, predict_next, run_em
from .exceptions import TAGMError
from .glasso import kkt_residual, solve_glasso
from .params import FitConfig, FitResult, InitConfig, ModelParams
from .selection import bic, count_free_params, select_k, select_lambda, stability
from .synthgen import GeneratorConfig, generate

__version__ = "0.1.0"

__all__ = [
    "fit_em", "forward_backward", "m_step", "predict_next", "run_em",
    "TAGMError", "kkt_residual", "solve_glasso",
    "FitConfig", "FitResult", "InitConfig", "ModelParams",
    "bic", "count_free_params", "select_k", "select_lambda", "stability",
    "GeneratorConfig", "generate",
]
