"""Probabilistic-circuit hallucination detection and gated lookahead decoding."""

from ._pcnet import *  # noqa: F401,F403
from ._pcnet import PcnetError

__all__ = [name for name in dir() if not name.startswith("_")]
