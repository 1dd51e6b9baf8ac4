"""Numerical periodic homogenization of doubly nonlinear parabolic flows.

Submodules
----------
convexcore  discrete convex potentials, conjugates and Moreau envelopes
fitz        monotone graphs and representative functions
cellsolve   periodic cell problems and tabulated effective laws
evolver     implicit Euler solver and certificates
twoscale    two-scale pairings, unfolding and corrector errors
study, cli  configuration, persistence and the convergence study
"""

__version__ = "0.1.0"
