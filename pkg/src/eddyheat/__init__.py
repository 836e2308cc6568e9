"""Transport-noise heat equation: vortex noise, effective diffusion, eigenvalues and Monte Carlo checks."""

__version__ = "0.1.0"
