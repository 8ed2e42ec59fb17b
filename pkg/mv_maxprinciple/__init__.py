"""Numerical laboratory for the stochastic maximum principle of McKean-Vlasov control problems."""

__version__ = "0.1.0"
