"""
Rotation-adaptive domain generalization for point cloud classification.

Trains a small shared-MLP classifier on aligned source clouds by alternating
intricate orientation mining with orientation-aware contrastive training, and
evaluates it on a rotated, differently styled target domain.

For more details, please refer to
https://github.com/Meraxa/rotadapt
"""

from __future__ import annotations

from .const import VERSION

__version__ = VERSION
