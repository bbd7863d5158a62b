"""Near-field mmWave link configuration with subarray APs.

Zadoff-Chu compressive training with DCS-AMP recovery, geometry-aided
message passing for local AoAs, and MMSE rate evaluation.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: E402

__all__ = ["__version__", "KERNEL_BACKEND"]
