"""Bayesian inverse graphics: differentiable rendering, posterior sampling
and prototypical probabilistic programs for few-shot concept learning."""

__version__ = "0.1.0"

FILE_FORMAT_VERSIONS = {"BIGI": 1, "BIGW": 1, "BIGP": 1}
