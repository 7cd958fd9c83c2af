"""Synthetic treadmill-gait corpus generator.

A desk-scale stand-in for a multi-subject sensor recording. Joint-angle
targets are band-limited quasi-periodic waveforms whose instantaneous
frequency tracks a treadmill speed profile; moments are phase-shifted
nonlinear functions of the same waveforms; raw sEMG channels are noise
carriers amplitude-modulated by muscle activations that lead their joints by
a configurable interval; IMU channels are analytic derivatives and gravity
projections of segment angles. Deterministic given (profile, seed).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import schema as sch
from .data import Trial
from .dsp import TimeSeriesChannel
from .errors import DataError

# Harmonic tables per joint type: (amplitudes deg, phases rad, offset deg).
_JOINT_HARMONICS = {
    "hip": (np.array([20.0, 5.0, 1.5]), np.array([0.0, 1.2, 2.0]), 8.0),
    "knee": (np.array([25.0, 12.0, 4.0]), np.array([1.8, 0.4, 2.6]), 25.0),
    "ankle": (np.array([10.0, 6.0, 2.5]), np.array([2.9, 1.0, 0.3]), -2.0),
}

# Moment shaping per joint type: (scale N.m/kg, phase delay cycles, offset).
_MOMENT_SHAPE = {
    "hip": (0.9, 0.06, -0.10),
    "knee": (0.6, 0.10, 0.05),
    "ankle": (1.3, 0.14, 0.20),
}

# Muscle -> (joint channel, gain, antagonist). Right-leg instrumentation.
_MUSCLE_MAP = {
    "gluteus_medius": ("hip_r", 0.70, False),
    "external_oblique": ("hip_r", 0.35, True),
    "semitendinosus": ("knee_r", 0.60, True),
    "gracilis": ("hip_r", 0.45, True),
    "biceps_femoris": ("knee_r", 0.65, True),
    "rectus_femoris": ("knee_r", 0.75, False),
    "vastus_lateralis": ("knee_r", 0.80, False),
    "vastus_medialis": ("knee_r", 0.70, False),
    "soleus": ("ankle_r", 0.85, False),
    "tibialis_anterior": ("ankle_r", 0.60, True),
    "gastrocnemius_medialis": ("ankle_r", 0.75, False),
}

# Per (site, axis) mixes for gyro = g1*dtheta + g2*ddtheta and
# accel = 9.81*(a1*sin(theta) + a2*cos(theta)) + a3*ddtheta.
_IMU_MIX = {
    "torso": {"gyro": [(1.0, 0.01), (0.4, -0.02), (0.15, 0.03)],
              "accel": [(0.9, 0.1, 0.004), (0.1, 0.95, -0.002), (0.3, 0.3, 0.006)]},
    "thigh": {"gyro": [(1.0, 0.02), (0.5, 0.01), (0.2, -0.015)],
              "accel": [(1.0, 0.05, 0.005), (0.05, 1.0, 0.003), (0.45, 0.2, -0.004)]},
    "shank": {"gyro": [(1.0, 0.015), (0.45, -0.01), (0.25, 0.02)],
              "accel": [(0.95, 0.1, 0.006), (0.1, 0.9, -0.005), (0.35, 0.4, 0.003)]},
    "foot": {"gyro": [(1.0, 0.025), (0.6, 0.015), (0.3, -0.02)],
             "accel": [(1.0, 0.02, 0.007), (0.02, 1.05, 0.004), (0.5, 0.25, -0.006)]},
}

_RAMP_S = 0.5          # raised-cosine blend at speed transitions
_JITTER_TAU_S = 0.8    # correlation time of the phase jitter process


@dataclass
class SynthProfile:
    """Generation parameters for one synthetic subject."""

    gait_period_s: float = 1.1
    duration_s: float = 20.0
    n_trials: int = 2
    speed_profile: tuple | None = None  # ((start_s, speed_mps), ...); None = 4-speed pattern
    amplitude_scales: tuple = (1.0,) * 6
    noise_std: float = 0.02
    preactivation_lead_s: float = 0.1
    subject_variation: float = 0.05
    emg_rate: float = 1000.0
    imu_rate: float = 200.0
    target_rate: float = 100.0

    def __post_init__(self):
        if self.gait_period_s <= 0:
            raise DataError("gait_period_s must be positive")
        if self.noise_std < 0:
            raise DataError("noise_std must be nonnegative")
        if np.isscalar(self.amplitude_scales):
            self.amplitude_scales = (float(self.amplitude_scales),) * 6
        self.amplitude_scales = tuple(float(a) for a in self.amplitude_scales)
        if len(self.amplitude_scales) != 6:
            raise DataError("amplitude_scales must be a scalar or 6 values")

    def schedule(self):
        if self.speed_profile is not None:
            sched = [(float(t), float(v)) for t, v in self.speed_profile]
        else:
            d = self.duration_s
            sched = [(0.0, 1.2), (0.25 * d, 1.55), (0.5 * d, 0.85), (0.75 * d, 1.2)]
        if not sched or sched[0][0] > 0.0:
            raise DataError("speed profile must start at t = 0")
        return sched


def _speed_curve(t, schedule):
    """Piecewise speed with raised-cosine ramps at transitions."""
    v = np.full_like(t, schedule[0][1])
    for start, speed in schedule[1:]:
        prev = v[np.searchsorted(t, start, side="left") - 1] if start > t[0] else v[0]
        blend = np.clip((t - start) / _RAMP_S, 0.0, 1.0)
        w = 0.5 - 0.5 * np.cos(np.pi * blend)
        v = np.where(t >= start, (1 - w) * prev + w * speed, v)
    return v


def _waveform(phase, joint_type, deriv=0, phase_rate=None, phase_accel=None):
    """Unit-normalized harmonic waveform and its analytic time derivatives."""
    amps, phis, _ = _JOINT_HARMONICS[joint_type]
    norm = amps.sum()
    two_pi = 2.0 * np.pi
    if deriv == 0:
        out = np.zeros_like(phase)
        for k, (a, p) in enumerate(zip(amps, phis), start=1):
            out += a * np.cos(two_pi * k * phase + p)
        return out / norm
    if deriv == 1:
        out = np.zeros_like(phase)
        for k, (a, p) in enumerate(zip(amps, phis), start=1):
            out += -a * two_pi * k * np.sin(two_pi * k * phase + p)
        return out * phase_rate / norm
    if deriv == 2:
        out = np.zeros_like(phase)
        for k, (a, p) in enumerate(zip(amps, phis), start=1):
            w = two_pi * k
            out += -a * (w ** 2 * np.cos(w * phase + p) * phase_rate ** 2
                         + w * np.sin(w * phase + p) * phase_accel)
        return out / norm
    raise ValueError(deriv)


def _joint_parts(name):
    joint_type, side = name.rsplit("_", 1)
    return joint_type, (0.5 if side == "l" else 0.0)


@dataclass
class _SubjectTraits:
    amp: np.ndarray        # (6,) joint amplitude multipliers
    offset: np.ndarray     # (6,) joint offset shifts, degrees
    emg_gain: np.ndarray   # (11,)
    imu_gain: np.ndarray   # (24,)


def _draw_traits(rng, variation):
    return _SubjectTraits(
        amp=1.0 + variation * rng.uniform(-1, 1, 6),
        offset=(variation / 0.05) * rng.uniform(-2, 2, 6) if variation > 0 else np.zeros(6),
        emg_gain=1.0 + variation * rng.uniform(-1, 1, 11),
        imu_gain=1.0 + variation * rng.uniform(-1, 1, 24),
    )


def _synth_trial(profile, traits, rng, subject_id, trial_id):
    p = profile
    master_rate = p.emg_rate
    for rate in (p.imu_rate, p.target_rate):
        if abs(master_rate / rate - round(master_rate / rate)) > 1e-9:
            raise DataError("emg_rate must be an integer multiple of the other rates")
    n_master = int(round(p.duration_s * master_rate))
    lead_n = int(round(p.preactivation_lead_s * master_rate))
    n_ext = n_master + lead_n
    t_ext = np.arange(n_ext) / master_rate
    schedule = p.schedule()

    # Instantaneous stride frequency tracks speed relative to the first speed.
    speed = _speed_curve(t_ext, schedule)
    freq = speed / (schedule[0][1] * p.gait_period_s)
    phase = np.concatenate(([0.0], np.cumsum((freq[1:] + freq[:-1]) / 2))) / master_rate
    phase += rng.uniform(0.0, 1.0)
    if p.noise_std > 0:
        # Slowly wandering phase jitter makes far-future prediction genuinely
        # harder than near-future prediction.
        sigma = 0.5 * p.noise_std
        rho = math.exp(-1.0 / (master_rate * _JITTER_TAU_S))
        eps = rng.standard_normal(n_ext) * sigma * math.sqrt(1 - rho ** 2)
        jitter = np.empty(n_ext)
        acc = 0.0
        decim = 10  # generate the OU walk at master_rate/decim and hold
        coarse = eps[::decim]
        rho_c = rho ** decim
        walk = np.empty(coarse.shape)
        for i, e in enumerate(coarse):
            acc = rho_c * acc + e
            walk[i] = acc
        jitter = np.repeat(walk, decim)[:n_ext]
        phase = phase + jitter
    phase_rate = np.gradient(phase) * master_rate
    phase_accel = np.gradient(phase_rate) * master_rate

    m_imu = int(round(master_rate / p.imu_rate))
    m_tgt = int(round(master_rate / p.target_rate))
    ph_now = phase[:n_master]
    channels = {}

    # Targets at target_rate: angles in degrees, moments in N.m/kg.
    ph_tgt = ph_now[::m_tgt]
    for j, name in enumerate(sch.JOINTS):
        joint_type, shift = _joint_parts(name)
        amps, _, offset = _JOINT_HARMONICS[joint_type]
        amp = amps.sum() * p.amplitude_scales[j] * traits.amp[j]
        w = _waveform(ph_tgt + shift, joint_type)
        channels[f"angle_{name}"] = TimeSeriesChannel(
            offset + traits.offset[j] + amp * w, p.target_rate, f"angle_{name}")
        mscale, delay, moffset = _MOMENT_SHAPE[joint_type]
        wm = _waveform(ph_tgt + shift + delay, joint_type)
        moment = moffset + mscale * (wm + 0.35 * wm * wm) * p.amplitude_scales[j] * traits.amp[j]
        channels[f"moment_{name}"] = TimeSeriesChannel(
            moment, p.target_rate, f"moment_{name}")

    # Raw sEMG at emg_rate: activation (leading the joint) times a noise carrier.
    ph_lead = phase[lead_n:lead_n + n_master]
    for i, muscle in enumerate(sch.MUSCLES):
        joint_name, gain, antagonist = _MUSCLE_MAP[muscle]
        joint_type, shift = _joint_parts(joint_name)
        w01 = 0.5 * (_waveform(ph_lead + shift, joint_type) + 1.0)
        if antagonist:
            w01 = 1.0 - w01
        activation = 0.15 + gain * traits.emg_gain[i] * w01
        carrier = rng.standard_normal(n_master)
        raw = activation * carrier + 0.5 * p.noise_std * rng.standard_normal(n_master)
        channels[f"emg_{muscle}"] = TimeSeriesChannel(raw, p.emg_rate, f"emg_{muscle}")

    # IMU at imu_rate: segment angles from joint waveforms, degrees.
    ph_imu = ph_now[::m_imu]
    pr_imu = phase_rate[:n_master][::m_imu]
    pa_imu = phase_accel[:n_master][::m_imu]

    def wave(joint_name, deriv):
        joint_type, shift = _joint_parts(joint_name)
        amps, _, _ = _JOINT_HARMONICS[joint_type]
        return amps.sum() * _waveform(ph_imu + shift, joint_type, deriv, pr_imu, pa_imu)

    segments = {
        "torso": {0: 0.2 * (wave("hip_r", 0) + wave("hip_l", 0)),
                  1: 0.2 * (wave("hip_r", 1) + wave("hip_l", 1)),
                  2: 0.2 * (wave("hip_r", 2) + wave("hip_l", 2))},
        "thigh": {d: wave("hip_r", d) for d in range(3)},
        "shank": {d: wave("hip_r", d) - wave("knee_r", d) for d in range(3)},
        "foot": {d: wave("hip_r", d) - wave("knee_r", d) - wave("ankle_r", d)
                 for d in range(3)},
    }
    deg2rad = math.pi / 180.0
    ch_idx = 0
    for site in sch.IMU_SITES:
        theta, dtheta, ddtheta = (segments[site][d] for d in range(3))
        for sensor in sch.IMU_SENSORS:
            for axis_i, axis in enumerate(sch.IMU_AXES):
                gain = traits.imu_gain[ch_idx]
                if sensor == "gyro":
                    g1, g2 = _IMU_MIX[site]["gyro"][axis_i]
                    sig = gain * (g1 * dtheta + g2 * ddtheta) * deg2rad
                else:
                    a1, a2, a3 = _IMU_MIX[site]["accel"][axis_i]
                    sig = gain * (9.81 * (a1 * np.sin(theta * deg2rad)
                                          + a2 * np.cos(theta * deg2rad))
                                  + a3 * ddtheta * deg2rad)
                sig = sig + p.noise_std * rng.standard_normal(len(ph_imu))
                name = f"imu_{site}_{sensor}_{axis}"
                channels[name] = TimeSeriesChannel(sig, p.imu_rate, name)
                ch_idx += 1

    return Trial(subject_id=subject_id, trial_id=trial_id, channels=channels,
                 speed_schedule=[list(s) for s in schedule])


def synth_subject(profile, seed, subject_id="S00"):
    """Generate all trials of one synthetic subject; deterministic in (profile, seed)."""
    rng = np.random.default_rng(seed)
    traits = _draw_traits(rng, profile.subject_variation)
    trial_seeds = rng.integers(0, 2 ** 63 - 1, size=profile.n_trials)
    trials = []
    for k in range(profile.n_trials):
        trial_rng = np.random.default_rng(int(trial_seeds[k]))
        trials.append(_synth_trial(profile, traits, trial_rng, subject_id, f"T{k:02d}"))
    return trials


def make_corpus(profile, n_subjects, seed):
    """Generate a multi-subject corpus with mild per-subject gait-period spread."""
    if n_subjects <= 0:
        raise DataError("empty corpus: n_subjects must be positive")
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(n_subjects):
        period = profile.gait_period_s * (1.0 + 0.4 * profile.subject_variation
                                          * rng.uniform(-1, 1))
        sub_profile = replace(profile, gait_period_s=period)
        sub_seed = int(rng.integers(0, 2 ** 63 - 1))
        sid = f"S{i:02d}"
        corpus.append((sid, sub_profile, synth_subject(sub_profile, sub_seed, sid)))
    return corpus
