"""Linear stochastic approximation under Markovian noise: simulation, bounds, TD."""

__version__ = "0.1.0"
