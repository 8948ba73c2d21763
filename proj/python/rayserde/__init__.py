# SPDX-License-Identifier: Apache-2.0
"""Ray-aligned sector-wise serialization of sparse LiDAR voxels."""

from ._rayserde import *  # noqa: F401,F403
from ._rayserde import __doc__  # noqa: F401

__version__ = "0.1.0"
