"""Anchor-free Siamese tracking with corner heads, built on numpy.

The main entry points are :func:`cornertrack.tracker.init` and
:func:`cornertrack.tracker.track`; see the README for the command line.
"""

from .cropping import BBox
from .config import Config
from .tensor import Tensor
from .tracker import CornerTracker, init, track

__all__ = ["BBox", "Config", "CornerTracker", "Tensor", "init", "track"]
__version__ = "0.1.0"
