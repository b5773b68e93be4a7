"""Prediction-and-optimization toolkit.

Oracles for three decision domains (fractional knapsack, mean-variance
portfolio, unit simplex) plus a one-dimensional interval domain, true and
surrogate losses with subgradients, ERM trainers for linear predictors,
synthetic/CSV data pipelines, exact-enumeration diagnostics, LP/MIP model
emission, and a CLI experiment harness.
"""

from .domains import (
    IntervalDomain,
    KnapsackDomain,
    PortfolioDomain,
    SimplexDomain,
    Solution,
)
from .oracle import (
    jacobian_regularized,
    solve,
    solve_knapsack,
    solve_knapsack_regularized,
    solve_portfolio_eq,
    solve_portfolio_qp,
    solve_simplex_argmin,
)
from .losses import (
    AbsDevLoss,
    LossEval,
    RegGapLoss,
    RegGapParams,
    SpoPlusLoss,
    SquaredLoss,
    abs_dev_loss,
    reg_gap_loss,
    spo_plus_loss,
    squared_loss,
    true_loss,
)
from .predictor import (
    LinearPredictor,
    TrainOptions,
    TrainReport,
    fit_erm_first_order,
    fit_least_squares,
    load_predictor,
    save_predictor,
)

__all__ = [
    "IntervalDomain",
    "KnapsackDomain",
    "PortfolioDomain",
    "SimplexDomain",
    "Solution",
    "solve",
    "solve_knapsack",
    "solve_knapsack_regularized",
    "solve_portfolio_eq",
    "solve_portfolio_qp",
    "solve_simplex_argmin",
    "jacobian_regularized",
    "LossEval",
    "RegGapParams",
    "true_loss",
    "squared_loss",
    "abs_dev_loss",
    "spo_plus_loss",
    "reg_gap_loss",
    "SquaredLoss",
    "AbsDevLoss",
    "SpoPlusLoss",
    "RegGapLoss",
    "LinearPredictor",
    "TrainOptions",
    "TrainReport",
    "fit_least_squares",
    "fit_erm_first_order",
    "save_predictor",
    "load_predictor",
]

__version__ = "0.1.0"
