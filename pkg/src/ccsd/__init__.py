"""Score-based generative modelling of combinatorial complexes."""

__version__ = "0.1.0"
