"""Self-similar profiles of the coagulation equation for kernels close to constant."""

__version__ = "0.1.0"
