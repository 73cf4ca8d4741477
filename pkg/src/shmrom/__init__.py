"""Reduced-order simulation-based damage classification for vibrating frames.

Submodules are imported on demand so that the command-line entry point can
configure BLAS threading before numpy loads.
"""

__version__ = "0.1.0"
