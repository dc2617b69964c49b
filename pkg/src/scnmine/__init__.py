"""Interaction scenario mining: slicing, Graph-DTW distance and extreme-scenario labeling."""

__version__ = "0.1.0"
