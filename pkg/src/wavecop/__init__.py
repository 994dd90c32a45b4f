"""Variational inference with wavelet-parameterized marginals and copulas."""

__version__ = "0.1.0"
