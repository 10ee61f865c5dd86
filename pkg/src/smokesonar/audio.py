"""Signal buffers and WAV interchange.

All signals move through the pipeline as mono float64 arrays with an explicit
sample rate.  On disk the interchange format is RIFF PCM WAV, mono, 16-bit
little-endian (48 kHz in the default configuration).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from smokesonar.errors import DataError


@dataclass
class SampleBuffer:
    """A mono signal: float64 amplitudes plus the rate they were sampled at."""

    samples: np.ndarray
    sample_rate: int = 48000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"expected mono 1-D signal, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise DataError("signal contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def write_wav(path, buf: SampleBuffer) -> None:
    """Write 16-bit PCM mono. Values are clipped to [-1, 1] before scaling."""
    clipped = np.clip(buf.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(str(path), buf.sample_rate, pcm)


def read_wav(path, expect_rate: int | None = None) -> SampleBuffer:
    """Read a mono PCM WAV back into float64 in [-1, 1].

    Raises DataError for stereo files or, when expect_rate is given, a
    mismatched sample rate.
    """
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError) as exc:
        raise DataError(f"unreadable wav file {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.ndim} channels")
    if expect_rate is not None and rate != expect_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {expect_rate} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32767.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483647.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 127.0
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return SampleBuffer(samples, int(rate))


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(x * x)))
