"""Numerical laboratory for parabolic p-Laplacian problems with gradient-dependent sources.

Submodules: ``regime`` (exponent calculus and regime atlas), ``field``
(grids, discrete operators, norms), ``solver`` (time integration),
``scenario`` and ``experiments`` (reproducible studies), ``cli``.
"""

__version__ = "0.1.0"
