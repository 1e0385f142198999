"""Mutual insurance against systematic longevity risk between two pension funds."""

from .decumulation import PathEnsemble, SimConfig, annuity_rate, consumption_shape_report, simulate
from .hjb import NumericalError, PdeSolution, SolverConfig, benefit_numeric, solve_finite, solve_infinite
from .market import MarketParams
from .mortality import CbdParams, MortalityModel, StylizedParams, cbd_model, stylized_model
from .preferences import Preferences, aggregator
from .pricing import clearing_check, insurance_price, optimal_controls
from .stylized import figure1_grid, solve_stylized, stylized_benefit

__version__ = "0.1.0"

__all__ = [
    "CbdParams",
    "MarketParams",
    "MortalityModel",
    "NumericalError",
    "PathEnsemble",
    "PdeSolution",
    "Preferences",
    "SimConfig",
    "SolverConfig",
    "StylizedParams",
    "aggregator",
    "annuity_rate",
    "benefit_numeric",
    "cbd_model",
    "clearing_check",
    "consumption_shape_report",
    "figure1_grid",
    "insurance_price",
    "optimal_controls",
    "simulate",
    "solve_finite",
    "solve_infinite",
    "solve_stylized",
    "stylized_benefit",
    "stylized_model",
]
