"""Desk-scale numerics for diffusions with a large incompressible drift on flat tori.

Fourier-Galerkin resolvents and semigroups of ``A + cB``, the limit
pseudo-resolvent and its generator on ``Ker(B)``, chain-graph quotients of
the flow, and Monte-Carlo simulation of ``dY = c b(Y) dt + sqrt(2) dW``.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .spectral import ModeLattice, SpectralField, GridField  # noqa: E402
from .operators import TrigVectorField  # noqa: E402
from .resolvent import ResolventLab  # noqa: E402
from .limit import LimitProcess  # noqa: E402

__all__ = ["ModeLattice", "SpectralField", "GridField", "TrigVectorField",
           "ResolventLab", "LimitProcess", "__version__"]
