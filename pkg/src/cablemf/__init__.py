"""Interacting integrate-and-fire neurons with cable-equation spike transmission.

Simulation of the finite network, a Picard solver for its mean-field limit,
first-passage density tools, and desk-scale convergence diagnostics.
"""

__version__ = "0.1.0"
