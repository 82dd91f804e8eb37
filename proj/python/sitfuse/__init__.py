"""Self-supervised segmentation, fusion, and tracking core."""

from ._sitfuse import *  # noqa: F401,F403
