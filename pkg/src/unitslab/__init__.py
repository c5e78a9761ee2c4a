"""Desk-scale laboratory for self-supervised MRI reconstruction with stochastic k-space masks."""

__version__ = "0.1.0"
