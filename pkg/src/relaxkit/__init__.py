"""Relaxation toolkit for scalar integral functionals.

Convex envelopes of sampled Lagrangians with convex-combination
certificates, condition (K) checks, relaxed energies, laminate recovery
sequences, Lavrentiev-gap scans and checks for x-dependent Lagrangians.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    SENTINEL,
    BoxDomain,
    Lagrangian,
    Mesh,
    PLField,
    SampledSlice,
    XiGrid,
    interpolate,
    make_grid,
    rect_mesh,
    sample_slice,
    uniform_interval,
)
from .convexify import (  # noqa: E402
    ConvexDecomposition,
    EnvelopeResult,
    XiPolicy,
    best_affine_minorant,
    bipolar_limit,
    decompose,
    envelope,
    restricted_bipolar,
)
from .gallery import builtin  # noqa: E402

__all__ = [
    "SENTINEL", "BoxDomain", "Lagrangian", "Mesh", "PLField", "SampledSlice", "XiGrid",
    "interpolate", "make_grid", "rect_mesh", "sample_slice", "uniform_interval",
    "ConvexDecomposition", "EnvelopeResult", "XiPolicy", "best_affine_minorant", "bipolar_limit",
    "decompose", "envelope", "restricted_bipolar", "builtin",
]
