"""Sampling-based solver for Wasserstein Hamiltonian flows.

A probability flow is represented as the push-forward of a fixed reference
Gaussian through a parameterized map. The induced finite-dimensional
Hamiltonian system on (parameters, momentum) is integrated with a symplectic
Euler scheme whose metric solves run matrix-free through MINRES.
"""

__version__ = "0.1.0"

from . import diagnostics, integrator, maps, metric, oracles, potentials  # noqa: F401
