"""Chirp generation, windowing, band-pass filtering, and frame emission.

The probe signal is an FMCW up-chirp: 64 samples sweeping 20->22 kHz at
48 kHz, tapered by a cosine (Tukey) window to suppress spectral splatter,
followed by 400 samples of silence in which echoes are received.  One
chirp + gap is a *frame*; the 400-sample gap bounds the unambiguous
round-trip range to about 1.43 m at 343 m/s.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from smokesonar.audio import SampleBuffer
from smokesonar.errors import ConfigError

SPEED_OF_SOUND = 343.0  # m/s in air at 20 C; configurable wherever it matters


@dataclass
class ChirpConfig:
    """The emitted waveform and its timing grid."""

    sample_rate: int = 48000
    f_low: float = 20000.0
    f_high: float = 22000.0
    chirp_len: int = 64
    gap_len: int = 400
    amplitude: float = 1.0
    tukey_ratio: float = 0.5

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        nyquist = self.sample_rate / 2.0
        if not (0 < self.f_low < self.f_high < nyquist):
            raise ConfigError(
                f"need 0 < f_low < f_high < Nyquist ({nyquist} Hz), "
                f"got f_low={self.f_low}, f_high={self.f_high}"
            )
        if self.chirp_len <= 0:
            raise ConfigError(f"chirp_len must be positive, got {self.chirp_len}")
        if self.gap_len < 0:
            raise ConfigError(f"gap_len must be >= 0, got {self.gap_len}")
        if not (0.0 <= self.amplitude <= 1.0):
            raise ConfigError(f"amplitude must lie in [0, 1], got {self.amplitude}")
        if not (0.0 <= self.tukey_ratio <= 1.0):
            raise ConfigError(f"tukey_ratio must lie in [0, 1], got {self.tukey_ratio}")
        if self.gap_len == 0:
            warnings.warn(
                "gap_len = 0: back-to-back chirps leave no listening window "
                "(maximum range 0)",
                stacklevel=2,
            )

    @property
    def sweep_time(self) -> float:
        return self.chirp_len / self.sample_rate

    @property
    def bandwidth(self) -> float:
        return self.f_high - self.f_low

    @property
    def carrier_freq(self) -> float:
        return (self.f_high + self.f_low) / 2.0

    @property
    def frame_len(self) -> int:
        return self.chirp_len + self.gap_len

    @property
    def frame_period(self) -> float:
        return self.frame_len / self.sample_rate

    def max_range(self, speed_of_sound: float = SPEED_OF_SOUND) -> float:
        """Largest unambiguous one-way distance: echoes of the full chirp must
        land before the next chirp starts."""
        return speed_of_sound * (self.gap_len / self.sample_rate) / 2.0


def generate_chirp(cfg: ChirpConfig) -> SampleBuffer:
    """Raw (unwindowed) linear up-chirp.

    Instantaneous frequency sweeps f_low -> f_high over the sweep time:
    phase(t) = 2*pi*(f_low*t + (B / (2*T_s)) * t^2), sampled at t = n / fs.
    """
    t = np.arange(cfg.chirp_len) / cfg.sample_rate
    rate = cfg.bandwidth / (2.0 * cfg.sweep_time)
    phase = 2.0 * np.pi * (cfg.f_low * t + rate * t * t)
    return SampleBuffer(cfg.amplitude * np.cos(phase), cfg.sample_rate)


def tukey_window(length: int, ratio: float) -> np.ndarray:
    """Tapered cosine window, symmetric about length/2: w[x] == w[length-x].

    ratio = 0 is the identity window, ratio = 1 a full raised cosine.  For
    ratio 0.5 on 64 samples the taper spans the first and last 16 samples.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ConfigError(f"taper ratio must lie in [0, 1], got {ratio}")
    x = np.arange(length, dtype=np.float64)
    w = np.ones(length)
    edge = ratio * length / 2.0
    if edge > 0:
        rise = x < edge
        w[rise] = 0.5 * (1.0 + np.cos(np.pi * (2.0 * x[rise] / (ratio * length) - 1.0)))
        fall = x > length - edge
        w[fall] = 0.5 * (1.0 + np.cos(np.pi * (2.0 * (length - x[fall]) / (ratio * length) - 1.0)))
    return w


def apply_tukey(buf: SampleBuffer, ratio: float) -> SampleBuffer:
    return SampleBuffer(buf.samples * tukey_window(len(buf), ratio), buf.sample_rate)


def windowed_chirp(cfg: ChirpConfig) -> SampleBuffer:
    """The actual emitted pulse: chirp with the configured taper applied."""
    return apply_tukey(generate_chirp(cfg), cfg.tukey_ratio)


def bandpass(buf: SampleBuffer, lo: float, hi: float, transition: float = 300.0) -> SampleBuffer:
    """Zero-phase band-pass by FFT masking.

    The mask is 1 inside [lo, hi], 0 beyond a raised-cosine transition of
    ``transition`` Hz on each side.  Being applied in the frequency domain
    the filter has exactly zero group delay (nothing to compensate) and the
    output length equals the input length.
    """
    from scipy import fft as sfft

    nyquist = buf.sample_rate / 2.0
    if not (0 < lo < hi < nyquist):
        raise ConfigError(f"band [{lo}, {hi}] must lie inside (0, {nyquist}) Hz")
    n = len(buf)
    if n == 0:
        return SampleBuffer(buf.samples.copy(), buf.sample_rate)
    # pad to an FFT-friendly length; awkward prime factors otherwise cost
    # orders of magnitude on multi-minute buffers
    n_fft = sfft.next_fast_len(n, real=True)
    spectrum = sfft.rfft(buf.samples, n_fft)
    f = sfft.rfftfreq(n_fft, 1.0 / buf.sample_rate)
    mask = np.zeros_like(f)
    inside = (f >= lo) & (f <= hi)
    mask[inside] = 1.0
    if transition > 0:
        lo_edge = (f >= lo - transition) & (f < lo)
        mask[lo_edge] = 0.5 * (1.0 + np.cos(np.pi * (lo - f[lo_edge]) / transition))
        hi_edge = (f > hi) & (f <= hi + transition)
        mask[hi_edge] = 0.5 * (1.0 + np.cos(np.pi * (f[hi_edge] - hi) / transition))
    return SampleBuffer(sfft.irfft(spectrum * mask, n_fft)[:n], buf.sample_rate)


def frame_stream(cfg: ChirpConfig) -> Iterator[np.ndarray]:
    """Infinite generator of emit frames: [windowed chirp | gap_len zeros]."""
    frame = np.zeros(cfg.frame_len)
    frame[: cfg.chirp_len] = windowed_chirp(cfg).samples
    while True:
        yield frame.copy()


def emit_signal(cfg: ChirpConfig, n_frames: int) -> SampleBuffer:
    """Concatenation of n_frames emit frames."""
    frame = np.zeros(cfg.frame_len)
    frame[: cfg.chirp_len] = windowed_chirp(cfg).samples
    return SampleBuffer(np.tile(frame, n_frames), cfg.sample_rate)
