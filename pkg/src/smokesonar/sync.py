"""Start-time offset cancellation.

The speaker and microphone do not start in sync, so the first line-of-sight
chirp sits at an unknown offset in the recorded stream.  That arrival is
treated as time zero for everything downstream.

Rather than sliding a window one sample at a time (one correlation per
sample of offset), a 64-sample window jumps by the subsample delay estimated
from the cross-spectrum phase slope against the reference chirp.  Windows
with no signal energy advance by a whole window length.  For a 650-sample
offset this needs on the order of a dozen window evaluations instead of 650.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from smokesonar.audio import SampleBuffer, rms
from smokesonar.errors import DataError, NoSignalError


@dataclass
class SyncResult:
    offset: int
    evaluations: int
    converged: bool
    fallback_used: bool
    residual: float  # fractional-sample delay left at the final position


def estimate_subsample_delay(
    reference: SampleBuffer,
    window: SampleBuffer,
    band: tuple[float, float] = (20000.0, 22000.0),
    noise_floor: float = 0.0,
) -> float:
    """Delay of ``window`` content relative to ``reference``, in samples.

    Positive when the window content arrives later than the reference.  The
    estimate is the magnitude-weighted least-squares slope of the unwrapped
    cross-spectrum phase over the in-band bins, scaled to samples.  Both
    buffers must have the same length (the chirp length, 64 by default).
    """
    if len(reference) != len(window):
        raise DataError(
            f"reference and window lengths differ: {len(reference)} vs {len(window)}"
        )
    w = window.samples
    if rms(w) <= noise_floor:
        raise NoSignalError("window energy at or below the noise floor")
    n = len(reference)
    xr = np.fft.rfft(reference.samples)
    xw = np.fft.rfft(w)
    cross = xw * np.conj(xr)
    freqs = np.fft.rfftfreq(n, 1.0 / reference.sample_rate)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    if np.count_nonzero(sel) < 2:
        raise DataError(f"fewer than two FFT bins inside band {band}")
    phase = np.unwrap(np.angle(cross[sel]))
    weight = np.abs(cross[sel])
    total = weight.sum()
    if total <= 0.0:
        raise NoSignalError("no in-band cross-spectrum energy")
    f_in = freqs[sel]
    f_mean = float(np.sum(weight * f_in) / total)
    p_mean = float(np.sum(weight * phase) / total)
    denom = float(np.sum(weight * (f_in - f_mean) ** 2))
    if denom == 0.0:
        raise NoSignalError("degenerate in-band frequency spread")
    slope = float(np.sum(weight * (f_in - f_mean) * (phase - p_mean)) / denom)
    # delayed-by-d window has cross-spectrum phase -2*pi*f*d/fs
    return -slope * reference.sample_rate / (2.0 * np.pi)


def exhaustive_scan(
    received: SampleBuffer,
    reference: SampleBuffer,
    limit: int | None = None,
) -> int:
    """Single-sample correlation scan; returns the first strong arrival.

    Normalized correlation at every lag; the result is the earliest lag whose
    correlation reaches 90% of the global maximum, so the line-of-sight
    arrival wins over later (equally strong) repeats of the chirp.
    """
    ref = reference.samples
    ref = ref - ref.mean()
    n_ref = ref.size
    sig = received.samples
    if limit is not None:
        sig = sig[: limit + n_ref]
    if sig.size < n_ref:
        raise DataError("received buffer shorter than the reference chirp")
    corr = np.correlate(sig, ref, mode="valid")
    # slice L2 norms via cumulative sums
    csum2 = np.concatenate([[0.0], np.cumsum(sig * sig)])
    energy = csum2[n_ref:] - csum2[:-n_ref]
    norm = np.sqrt(energy * float(np.dot(ref, ref)))
    score = np.zeros_like(corr)
    np.divide(corr, norm, out=score, where=norm > 0)
    peak = score.max()
    if peak <= 0:
        raise NoSignalError("no correlated arrival found in scan range")
    candidates = np.flatnonzero(score >= 0.9 * peak)
    return int(candidates[0])


def _window_correlation(reference: np.ndarray, window: np.ndarray) -> float:
    r = reference - reference.mean()
    w = window - window.mean()
    denom = float(np.linalg.norm(r) * np.linalg.norm(w))
    if denom == 0.0:
        return 0.0
    return float(np.dot(r, w)) / denom


def find_start_offset(
    received: SampleBuffer,
    reference: SampleBuffer,
    band: tuple[float, float] = (20000.0, 22000.0),
    max_evaluations: int = 50,
    energy_gate: float = 2.0,
    min_corr: float = 0.5,
    scan_limit: int | None = None,
) -> SyncResult:
    """Locate the first line-of-sight chirp by iterative window jumps.

    From position 0: if the window is below the energy gate, hop a full
    window ahead; otherwise jump by the rounded phase-slope delay estimate.
    Converged when the residual is under one sample AND the window actually
    correlates with the reference (in-band energy alone can be filter
    ringing ahead of the true arrival; the shape check rejects it and the
    walk continues forward).  Non-convergence inside ``max_evaluations`` (or
    a delay estimate beyond the window length) falls back to the exhaustive
    scan and flags it.
    """
    n_ref = len(reference)
    sig = received.samples
    if sig.size < n_ref:
        raise DataError("received buffer shorter than one window")
    # robust noise floor: most of the stream is inter-chirp gap
    sigma = 1.4826 * float(np.median(np.abs(sig)))
    gate = energy_gate * sigma
    pos = 0
    evaluations = 0
    while evaluations < max_evaluations:
        if pos < 0:
            pos = 0
        if pos + n_ref > sig.size:
            break  # walked past the end: diverged
        window = SampleBuffer(sig[pos : pos + n_ref], received.sample_rate)
        evaluations += 1
        if rms(window.samples) <= gate:
            pos += n_ref
            continue
        try:
            delta = estimate_subsample_delay(reference, window, band)
        except NoSignalError:
            pos += n_ref
            continue
        if abs(delta) < 1.0:
            # |corr|: at a sub-sample residual the signed correlation can sit
            # anywhere on the carrier cycle, including fully inverted
            if abs(_window_correlation(reference.samples, window.samples)) >= min_corr:
                return SyncResult(pos, evaluations, True, False, delta)
            pos += n_ref  # coherent ringing, not the chirp: keep walking
            continue
        if abs(delta) > n_ref:
            break  # estimate beyond the window: diverged
        pos += int(round(delta))
    offset = exhaustive_scan(received, reference, limit=scan_limit)
    return SyncResult(offset, evaluations, False, True, 0.0)
