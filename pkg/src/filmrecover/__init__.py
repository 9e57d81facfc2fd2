"""Recovery of CT film photographs: synthetic data, map algebra, losses and evaluation."""

__version__ = "0.1.0"
