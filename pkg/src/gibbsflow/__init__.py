"""Numerical laboratory for thermodynamic formalism of suspension semiflows
over piecewise expanding Markov interval maps."""

__version__ = "0.1.0"
