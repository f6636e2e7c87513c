"""Random polarizations and their convergence to the symmetric decreasing rearrangement."""

__version__ = "0.1.0"
