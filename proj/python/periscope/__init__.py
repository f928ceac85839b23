"""Periocular verification with deep-layer, handcrafted and fused comparators."""

from ._core import *  # noqa: F401,F403
from ._core import PeriscopeError, __doc__  # noqa: F401

__version__ = "0.1.0"
