"""Stochastic FitzHugh-Nagumo networks and their mean-field kinetic equation."""
from .grid import Density, Grid2D
from .model import ModelParams, WeightParams

__all__ = ["Density", "Grid2D", "ModelParams", "WeightParams"]
__version__ = "0.1.0"
