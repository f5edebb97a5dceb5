"""Bayesian optimization of noisy objectives whose precision is bought with MCMC draws."""

__version__ = "0.1.0"
