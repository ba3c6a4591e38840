"""Distributed stochastic subgradient methods with time-variable weighting.

Projected SGD at every node, diffusion or consensus mixing over a
communication graph, and the linearly weighted iterate average, together with
a synchronous network simulator and checks against the convergence bounds.
"""

__version__ = "0.1.0"
