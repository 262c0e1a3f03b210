"""Block-circulant private inference toolkit: encodings, planners, mock-HE protocols."""

__version__ = "0.1.0"
