"""Time-splitting Navier-Stokes solver with open outlets and POD reduced-order models."""

__version__ = "0.1.0"
