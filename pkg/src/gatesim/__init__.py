"""Stochastic disc-through-beam-gate simulator and Markov-chain coarse-graining."""

__version__ = "0.1.0"
