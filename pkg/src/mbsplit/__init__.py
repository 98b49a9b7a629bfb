"""Micro-batch division of convolution kernels under workspace budgets."""

__version__ = "0.1.0"
