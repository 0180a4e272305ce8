"""Physical-layer parameter estimation for optical links by Gaussian-process
history matching."""

__version__ = "0.1.0"
