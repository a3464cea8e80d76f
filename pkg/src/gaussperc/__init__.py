"""Monte Carlo toolkit for excursion-set percolation of smooth Gaussian fields."""
from __future__ import annotations

__version__ = "0.1.0"
