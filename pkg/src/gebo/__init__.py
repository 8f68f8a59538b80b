"""Gradient-enhanced local Bayesian optimization with a BFGS baseline."""

from .optimizer import BoConfig, run
from .problems import make_problem

__all__ = ["BoConfig", "make_problem", "run"]
