"""gaitcast: long-horizon prediction of lower-limb joint angles and moments
from fused sEMG and IMU windows."""

__version__ = "0.1.0"
