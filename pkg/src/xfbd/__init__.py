"""Focused building-damage toolkit: single-building Poisson blends and
pixel/object-level damage scoring."""

from .errors import XfbdError
from .raster import DamageClass

__version__ = "0.1.0"

__all__ = ["DamageClass", "XfbdError", "__version__"]
