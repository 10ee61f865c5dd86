"""Acoustic smoking-event detection via chirp sonar.

Pipeline stages: chirp frontend -> start-offset sync -> per-frame correlation
ranging -> peak tracking -> respiration analysis + CNN hand-movement
classification -> composite/periodicity fusion.  A scene simulator renders
synthetic received audio with exact ground truth for end-to-end testing.
"""

from smokesonar._kernels import KERNEL_BACKEND
from smokesonar.audio import SampleBuffer

__version__ = "0.1.0"

__all__ = ["SampleBuffer", "KERNEL_BACKEND", "__version__"]
