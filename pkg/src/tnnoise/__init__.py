"""Tensor-network characterization and mitigation of correlated noise on circuit layers."""

__version__ = "0.1.0"
