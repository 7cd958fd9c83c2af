"""Canonical channel schema for trials.

Channel order is fixed so that matrices, normalizers, and checkpoints agree
across machines: 11 sEMG envelopes, then 4 IMU sites x (accel xyz, gyro xyz),
then 6 joint angles, then 6 joint moments. Joints are ordered
hip/knee/ankle x right/left.
"""

from dataclasses import dataclass

MUSCLES = [
    "gluteus_medius",
    "external_oblique",
    "semitendinosus",
    "gracilis",
    "biceps_femoris",
    "rectus_femoris",
    "vastus_lateralis",
    "vastus_medialis",
    "soleus",
    "tibialis_anterior",
    "gastrocnemius_medialis",
]

IMU_SITES = ["torso", "thigh", "shank", "foot"]
IMU_SENSORS = ["accel", "gyro"]
IMU_AXES = ["x", "y", "z"]

JOINTS = ["hip_r", "hip_l", "knee_r", "knee_l", "ankle_r", "ankle_l"]

EMG_CHANNELS = [f"emg_{m}" for m in MUSCLES]
IMU_CHANNELS = [
    f"imu_{site}_{sensor}_{axis}"
    for site in IMU_SITES
    for sensor in IMU_SENSORS
    for axis in IMU_AXES
]
INPUT_CHANNELS = EMG_CHANNELS + IMU_CHANNELS
ANGLE_CHANNELS = [f"angle_{j}" for j in JOINTS]
MOMENT_CHANNELS = [f"moment_{j}" for j in JOINTS]
TARGET_CHANNELS = ANGLE_CHANNELS + MOMENT_CHANNELS
ALL_CHANNELS = INPUT_CHANNELS + TARGET_CHANNELS

N_INPUTS = len(INPUT_CHANNELS)      # 35
N_TARGETS = len(TARGET_CHANNELS)    # 12
N_JOINTS = len(JOINTS)              # 6

# Display order mirroring the conventional right-then-left table layout.
JOINT_DISPLAY = ["hip_r", "knee_r", "ankle_r", "hip_l", "knee_l", "ankle_l"]
JOINT_LABELS = {
    "hip_r": "Hip Right", "knee_r": "Knee Right", "ankle_r": "Ankle Right",
    "hip_l": "Hip Left", "knee_l": "Knee Left", "ankle_l": "Ankle Left",
}


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    rate_hz: float
    group: str  # "emg" | "imu" | "angle" | "moment"


def raw_schema(emg_rate=1000.0, imu_rate=200.0, target_rate=100.0):
    """Schema of an on-disk raw trial: native per-group sampling rates."""
    channels = []
    channels += [ChannelSpec(n, emg_rate, "emg") for n in EMG_CHANNELS]
    channels += [ChannelSpec(n, imu_rate, "imu") for n in IMU_CHANNELS]
    channels += [ChannelSpec(n, target_rate, "angle") for n in ANGLE_CHANNELS]
    channels += [ChannelSpec(n, target_rate, "moment") for n in MOMENT_CHANNELS]
    return channels


def prepared_schema(rate=100.0):
    """Schema after preprocessing: every channel at the common rate."""
    channels = []
    channels += [ChannelSpec(n, rate, "emg") for n in EMG_CHANNELS]
    channels += [ChannelSpec(n, rate, "imu") for n in IMU_CHANNELS]
    channels += [ChannelSpec(n, rate, "angle") for n in ANGLE_CHANNELS]
    channels += [ChannelSpec(n, rate, "moment") for n in MOMENT_CHANNELS]
    return channels
