"""Counterfactual detection and antecedent/consequent span regression
from multi-head self-attention features."""

__version__ = "0.1.0"
