"""Causal Butterworth filtering and the sEMG envelope pipeline.

Filters are designed from the analog Butterworth prototype via the bilinear
transform with frequency prewarping and realized as cascaded biquads
(second-order sections) for numerical robustness. Filtering is strictly
causal with zero initial state, so everything here is usable sample-by-sample
in a real-time loop.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import sosfilt

from .errors import DataError


@dataclass
class TimeSeriesChannel:
    """Uniformly sampled scalar signal with an explicit sample rate."""

    samples: np.ndarray
    sample_rate_hz: float
    label: str = ""

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise DataError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        self.samples = np.asarray(self.samples, dtype=np.float64)

    def __len__(self):
        return len(self.samples)


@dataclass
class BiquadSection:
    """One second-order section, normalized so a0 = 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self):
        return np.roots([1.0, self.a1, self.a2])


@dataclass
class BiquadCascade:
    """Ordered biquad sections plus design metadata."""

    sections: list
    design_kind: str = "lowpass"
    cutoff_hz: float = 0.0
    order: int = 0

    def __post_init__(self):
        for k, s in enumerate(self.sections):
            if np.any(np.abs(s.poles()) >= 1.0):
                raise DataError(f"section {k} is unstable (pole on/outside unit circle)")
        if self.order and len(self.sections) != self.order // 2:
            raise DataError("section count must equal order/2")

    def as_sos(self):
        """Coefficients as an (n_sections, 6) array of [b0 b1 b2 1 a1 a2]."""
        return np.array(
            [[s.b0, s.b1, s.b2, 1.0, s.a1, s.a2] for s in self.sections],
            dtype=np.float64,
        )


@dataclass
class FilterState:
    """Per-section delay registers for streaming use; reset state is zero."""

    z: np.ndarray

    @classmethod
    def zeros(cls, cascade):
        return cls(np.zeros((len(cascade.sections), 2), dtype=np.float64))


def design_butterworth(order, cutoff_hz, sample_rate_hz, kind):
    """Design an even-order Butterworth low/highpass as a biquad cascade.

    Analog prototype poles are prewarped, mapped by the bilinear transform,
    and paired into sections with per-section gain pinned at DC (lowpass) or
    Nyquist (highpass), giving unity passband gain and the -3 dB point
    exactly at cutoff_hz.
    """
    if order <= 0 or order % 2 != 0:
        raise DataError(f"order must be a positive even integer, got {order}")
    if kind not in ("lowpass", "highpass"):
        raise DataError(f"kind must be 'lowpass' or 'highpass', got {kind!r}")
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise DataError(
            f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist={sample_rate_hz / 2} Hz)")

    fs2 = 2.0 * sample_rate_hz
    warped = fs2 * math.tan(math.pi * cutoff_hz / sample_rate_hz)

    sections = []
    n = order
    for k in range(n // 2):
        # Prototype pole pair on the unit circle, left half-plane.
        theta = math.pi * (2 * k + n + 1) / (2 * n)
        q = complex(math.cos(theta), math.sin(theta))
        if kind == "lowpass":
            p = warped * q
        else:
            p = warped / q
        zp = (fs2 + p) / (fs2 - p)
        a1 = -2.0 * zp.real
        a2 = abs(zp) ** 2
        if kind == "lowpass":
            # Zeros at z = -1; normalize section gain at z = +1.
            g = (1.0 + a1 + a2) / 4.0
            sections.append(BiquadSection(g, 2.0 * g, g, a1, a2))
        else:
            # Zeros at z = +1; normalize section gain at z = -1.
            g = (1.0 - a1 + a2) / 4.0
            sections.append(BiquadSection(g, -2.0 * g, g, a1, a2))
    return BiquadCascade(sections, design_kind=kind, cutoff_hz=cutoff_hz, order=order)


def frequency_response(cascade, freqs_hz, sample_rate_hz):
    """Complex H(e^{j 2 pi f / fs}) of the cascade at the given frequencies."""
    f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
    z = np.exp(1j * 2.0 * np.pi * f / sample_rate_hz)
    zinv = 1.0 / z
    h = np.ones_like(z)
    for s in cascade.sections:
        h *= (s.b0 + s.b1 * zinv + s.b2 * zinv ** 2) / (1.0 + s.a1 * zinv + s.a2 * zinv ** 2)
    return h


def filter_causal(cascade, channel, state=None):
    """Run the cascade causally over a channel; zero initial state.

    Output sample n depends only on input samples 0..n. If `state` is given
    it is advanced in place, enabling streaming across chunk boundaries.
    """
    x = channel.samples
    if x.size == 0:
        raise DataError("cannot filter an empty channel")
    bad = ~np.isfinite(x)
    if bad.any():
        raise DataError(
            f"non-finite input at index {int(np.argmax(bad))} in channel {channel.label!r}")
    sos = cascade.as_sos()
    if state is None:
        y = sosfilt(sos, x)
    else:
        y, state.z[...] = sosfilt(sos, x, zi=state.z)
    return TimeSeriesChannel(y, channel.sample_rate_hz, channel.label)


def rectify(channel):
    """Full-wave rectification: elementwise absolute value."""
    return TimeSeriesChannel(np.abs(channel.samples), channel.sample_rate_hz, channel.label)


def emg_envelope(raw, highpass_hz=25.0, lowpass_hz=6.0, order=2):
    """Three-step envelope: highpass, rectify, lowpass — all causal.

    Defaults match the 1000 Hz sEMG stream (25 Hz highpass, 6 Hz lowpass,
    order-2 sections); cutoffs are configurable for tests at other rates.
    """
    hp = design_butterworth(order, highpass_hz, raw.sample_rate_hz, "highpass")
    lp = design_butterworth(order, lowpass_hz, raw.sample_rate_hz, "lowpass")
    return filter_causal(lp, rectify(filter_causal(hp, raw)))


def decimate(channel, target_rate_hz, guard_order=2, guard_ratio=0.4):
    """Integer-ratio downsampling with a causal anti-alias guard filter.

    A lowpass at guard_ratio * target_rate_hz runs before every M-th sample
    (starting at index 0) is kept, so out-of-band content cannot alias.
    Output length is ceil(len / M).
    """
    ratio = channel.sample_rate_hz / target_rate_hz
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9:
        raise DataError(
            f"decimation ratio {channel.sample_rate_hz}/{target_rate_hz} is not a "
            "positive integer")
    guard = design_butterworth(
        guard_order, guard_ratio * target_rate_hz, channel.sample_rate_hz, "lowpass")
    smoothed = filter_causal(guard, channel)
    return TimeSeriesChannel(smoothed.samples[::m], target_rate_hz, channel.label)
