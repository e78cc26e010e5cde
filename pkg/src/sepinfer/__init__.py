"""sepinfer - separability analysis and marginal propagation for Bayesian networks."""

__version__ = "0.1.0"
__author__ = "sepinfer developers"
