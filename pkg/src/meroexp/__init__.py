"""Meromorphic interpolation of random Fourier series by Cauchy kernel sums
and reconstruction as exponential sums over the pole set."""

__version__ = "0.1.0"

from .pipeline import ExperimentConfig, run

__all__ = ["ExperimentConfig", "run", "__version__"]
