"""Per-frame correlation profiles and distance peak extraction.

For every frame the emitted chirp is correlated (Pearson, i.e. covariance
normalized by both standard deviations) against each 64-sample slice of the
received frame, sliding from the chirp onset.  A slice starting ``lag``
samples after the onset corresponds to a round-trip delay of ``lag`` samples
and hence a reflector at d = v * lag / (2 * fs).  Lags run 0..frame_len -
chirp_len, covering distances up to ~1.43 m with the default timing; the
line-of-sight arrival shows up at lag 0 and is excluded by a blanking zone.

Each local maximum above the detection threshold is one obstacle; peak
positions are refined to sub-lag precision by 3-point parabolic
interpolation, which resolves the sub-centimeter motion that breathing
produces.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from smokesonar import _kernels
from smokesonar.audio import SampleBuffer
from smokesonar.errors import DataError
from smokesonar.frontend import SPEED_OF_SOUND, ChirpConfig

PROFILE_DUMP_MAGIC = b"RCCPROF1"


@dataclass
class Peak:
    lag: float  # round-trip delay in samples (fractional after refinement)
    distance: float  # meters
    rcc: float


@dataclass
class RccProfile:
    frame_index: int
    timestamp: float
    values: np.ndarray  # one correlation per lag 0..frame_len-chirp_len
    peaks: list[Peak] = field(default_factory=list)
    degenerate_lags: np.ndarray | None = None  # zero-variance slices, rcc forced to 0
    phases: np.ndarray | None = None  # carrier phase per lag (envelope profiles only)


def lag_to_distance(
    lag: float, sample_rate: int, speed_of_sound: float = SPEED_OF_SOUND
) -> float:
    """Round-trip delay in samples -> one-way distance in meters."""
    if lag < 0:
        raise DataError(f"lag must be >= 0, got {lag}")
    return speed_of_sound * lag / (2.0 * sample_rate)


def rcc_profile(
    emit: SampleBuffer,
    frame_window: SampleBuffer,
    frame_index: int = 0,
    timestamp: float = 0.0,
) -> RccProfile:
    """Correlation-vs-lag vector for one frame.

    ``frame_window`` is the received frame starting at the (synchronized)
    chirp onset; its length fixes the lag span.  Zero-variance slices get a
    correlation of 0 and are flagged in ``degenerate_lags`` rather than
    raising.
    """
    if len(frame_window) < len(emit):
        raise DataError("frame window shorter than the emitted chirp")
    values, degenerate = _kernels.rcc_correlate(emit.samples, frame_window.samples)
    return RccProfile(
        frame_index=frame_index,
        timestamp=timestamp,
        values=values,
        degenerate_lags=degenerate,
    )


def analytic_reference(emit: SampleBuffer) -> tuple[np.ndarray, np.ndarray]:
    """Mean-removed emit and its Hilbert transform, for envelope profiles."""
    from scipy.signal import hilbert

    e = emit.samples - emit.samples.mean()
    return e, np.imag(hilbert(e))


def envelope_profile(
    emit: SampleBuffer,
    frame_window: SampleBuffer,
    frame_index: int = 0,
    timestamp: float = 0.0,
    reference: tuple[np.ndarray, np.ndarray] | None = None,
) -> RccProfile:
    """Envelope of the correlation profile (analytic-reference magnitude).

    The plain correlation of a short chirp ripples at the carrier period, so
    its argmax snaps to a ~2.3-sample lattice; the envelope removes the
    ripple, letting peaks track delay continuously at sub-lag precision.
    Same lag grid, same [0, 1] scale (exact copy scores 1.0), but values
    carry no sign.
    """
    if len(frame_window) < len(emit):
        raise DataError("frame window shorter than the emitted chirp")
    e_re, e_im = reference if reference is not None else analytic_reference(emit)
    values, phases, degenerate = _kernels.envelope_correlate(e_re, e_im, frame_window.samples)
    return RccProfile(
        frame_index=frame_index,
        timestamp=timestamp,
        values=values,
        degenerate_lags=degenerate,
        phases=phases,
    )


def _parabolic_refine(values: np.ndarray, k: int) -> tuple[float, float]:
    """Sub-lag peak position and height from the 3-point parabola at k."""
    if k <= 0 or k >= values.size - 1:
        return float(k), float(values[k])
    y0 = float(values[k - 1])
    y1 = float(values[k])
    y2 = float(values[k + 1])
    curv = y0 - 2.0 * y1 + y2
    if curv >= 0.0:
        return float(k), y1
    shift = 0.5 * (y0 - y2) / curv
    shift = -0.5 if shift < -0.5 else (0.5 if shift > 0.5 else shift)
    height = y1 - 0.25 * (y0 - y2) * shift
    return k + shift, height


def detect_peaks(
    profile: RccProfile,
    sample_rate: int,
    min_rcc: float = 0.3,
    min_separation: int = 12,
    blanking: int = 8,
    speed_of_sound: float = SPEED_OF_SOUND,
    carrier_freq: float | None = None,
    skirt_window: int = 44,
    skirt_ratio: float = 0.7,
) -> list[Peak]:
    """Local maxima above ``min_rcc``, at least ``min_separation`` lags apart.

    The correlation envelope of each echo has a wide skirt (down to ~0.25 of
    the peak out to ~40 lags); noise riding that skirt makes spurious local
    maxima, so inside ``skirt_window`` lags of a stronger kept peak a
    candidate must reach ``skirt_ratio`` of it.  Comparable-strength
    neighbours (two real obstacles) both survive.

    Peaks in the first ``blanking`` lags are dropped from the output so
    line-of-sight leakage never registers as an obstacle (the LOS peak still
    suppresses its own skirt first).

    Sub-lag refinement: on envelope profiles with a known carrier the
    correlation phase at the peak gives the subsample residual directly (far
    more precise than the parabola on the wide envelope lobe); otherwise
    3-point parabolic interpolation.  Peaks are stored on the profile and
    returned sorted by distance.
    """
    v = profile.values
    n = v.size
    peaks: list[Peak] = []
    local_max = np.flatnonzero(
        (v[1:-1] >= min_rcc) & (v[1:-1] >= v[:-2]) & (v[1:-1] > v[2:])
    ) + 1
    candidates = list(local_max)
    if n >= 2 and v[0] >= min_rcc and v[0] >= v[1]:
        candidates.insert(0, 0)
    # strongest first: suppress anything too close to a keeper, or on a
    # keeper's skirt without comparable strength
    candidates.sort(key=lambda k: -v[k])
    kept: list[int] = []
    for k in candidates:
        ok = True
        for j in kept:
            gap = abs(k - j)
            if gap < min_separation or (gap < skirt_window and v[k] < skirt_ratio * v[j]):
                ok = False
                break
        if ok:
            kept.append(k)
    use_phase = profile.phases is not None and carrier_freq is not None
    for k in kept:
        if k < blanking:
            continue
        lag, height = _parabolic_refine(v, k)
        if use_phase:
            # lag residual from the carrier phase of the complex correlation
            shift = -profile.phases[k] * sample_rate / (2.0 * np.pi * carrier_freq)
            limit = sample_rate / (2.0 * carrier_freq)  # phase wraps beyond this
            if abs(shift) <= limit:
                lag = k + shift
        peaks.append(
            Peak(lag=lag, distance=lag_to_distance(lag, sample_rate, speed_of_sound), rcc=height)
        )
    peaks.sort(key=lambda p: p.distance)
    profile.peaks = peaks
    return peaks


def iter_frame_windows(received: SampleBuffer, offset: int, cfg: ChirpConfig):
    """Yield (frame_index, timestamp, window SampleBuffer) per complete frame.

    Timestamps count from the line-of-sight arrival (offset), i.e. frame k
    starts at t = k * frame_period.
    """
    if offset < 0:
        raise DataError(f"offset must be >= 0, got {offset}")
    n = len(received)
    frame_len = cfg.frame_len
    n_frames = (n - offset) // frame_len
    for k in range(n_frames):
        start = offset + k * frame_len
        window = SampleBuffer(received.samples[start : start + frame_len], received.sample_rate)
        yield k, k * cfg.frame_period, window


def profiles_from_buffer(
    received: SampleBuffer,
    offset: int,
    cfg: ChirpConfig,
    emit: SampleBuffer | None = None,
    envelope: bool = False,
) -> list[RccProfile]:
    """Profiles for every complete frame after ``offset``.

    envelope=True computes envelope profiles (what the detection pipeline
    tracks peaks on); the default is the plain signed correlation.
    """
    from smokesonar.frontend import windowed_chirp

    ref = emit if emit is not None else windowed_chirp(cfg)
    reference = analytic_reference(ref) if envelope else None
    out = []
    for k, t, window in iter_frame_windows(received, offset, cfg):
        if envelope:
            out.append(envelope_profile(ref, window, k, t, reference))
        else:
            out.append(rcc_profile(ref, window, frame_index=k, timestamp=t))
    return out


def dump_profiles(path, profiles: list[RccProfile]) -> None:
    """Debug dump: magic, u32 frame count, u32 lag count, then little-endian
    float32 values frame by frame."""
    if not profiles:
        raise DataError("nothing to dump: empty profile list")
    n_lags = profiles[0].values.size
    with open(path, "wb") as fh:
        fh.write(PROFILE_DUMP_MAGIC)
        fh.write(struct.pack("<II", len(profiles), n_lags))
        for p in profiles:
            if p.values.size != n_lags:
                raise DataError("inconsistent lag counts across profiles")
            fh.write(p.values.astype("<f4").tobytes())


def load_profiles(path) -> np.ndarray:
    """Read a dump back as a (frames, lags) float32 matrix."""
    with open(path, "rb") as fh:
        magic = fh.read(len(PROFILE_DUMP_MAGIC))
        if magic != PROFILE_DUMP_MAGIC:
            raise DataError(f"bad profile dump magic: {magic!r}")
        n_frames, n_lags = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(n_frames * n_lags * 4), dtype="<f4")
    if data.size != n_frames * n_lags:
        raise DataError("truncated profile dump")
    return data.reshape(n_frames, n_lags)
