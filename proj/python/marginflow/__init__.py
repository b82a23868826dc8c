"""Gradient-flow dynamics of layered ReLU classifiers under exponential loss.

Thin re-export of the compiled core. Weights are lists of 2-d numpy arrays,
datasets are (X, y) pairs, and configs/summaries are JSON strings with the
same schema the command line uses.
"""

from ._core import (
    closed_form_1d,
    fit_rate,
    forward,
    grad_weights,
    hard_margin_direction,
    init_network,
    li,
    li_inverse,
    make_dataset,
    run_config,
    run_config_to,
    structural_residual,
    verify,
)

__all__ = [
    "closed_form_1d",
    "fit_rate",
    "forward",
    "grad_weights",
    "hard_margin_direction",
    "init_network",
    "li",
    "li_inverse",
    "make_dataset",
    "run_config",
    "run_config_to",
    "structural_residual",
    "verify",
]
