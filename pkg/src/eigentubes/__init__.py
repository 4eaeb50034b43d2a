"""Semiclassical averages over submanifolds: geometry, return dynamics,
tube covers, quantized cutoffs, and the experiment pipelines that tie the
numerics to reproducible on-disk runs.
"""

from .errors import (
    AssertionFailure,
    ConfigError,
    EigentubesError,
    SchemaMismatch,
)
from .geometry import CotangentPoint, conformal_torus, flat_torus, sphere
from .kernels import backend_name

__version__ = "0.1.0"

__all__ = [
    "AssertionFailure",
    "ConfigError",
    "CotangentPoint",
    "EigentubesError",
    "SchemaMismatch",
    "backend_name",
    "conformal_torus",
    "flat_torus",
    "sphere",
    "__version__",
]
