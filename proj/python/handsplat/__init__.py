# Copyright Contributors to the handsplat project
# SPDX-License-Identifier: Apache-2.0
"""Mesh-anchored relightable Gaussian avatars."""

from ._handsplat import *  # noqa: F401,F403
from ._handsplat import __doc__  # noqa: F401
