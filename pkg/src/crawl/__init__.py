"""Graph learning with random-walk feature matrices and 1D convolutions."""

__version__ = "0.1.0"
