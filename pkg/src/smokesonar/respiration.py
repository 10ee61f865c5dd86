"""Breath-path selection, trough picking, and per-breath classification.

Chest motion shows up as several correlated tracks (multipath).  Candidates
are tracks whose movement stays under the amplitude cap; the major breath
path is the candidate with the strongest spectral component inside the
normal respiration band (0.16-0.6 Hz).  Troughs of the major path's
distance series (full inhalation: chest nearest the phone) are picked by a
two-step rule, then each breath is classified by depth and by the slope
asymmetry between the second before and the second after the trough.

Sign convention throughout: inhaling SHRINKS the measured distance, so a
trough is an inhalation endpoint and series maxima are exhaled rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from smokesonar.errors import InsufficientDataError
from smokesonar.tracking import SequenceProfile, TrackedSequence


@dataclass
class BreathEvent:
    trough_time: float
    depth: float  # meters
    inhale_slope: float  # m/s, absolute average over the second before the trough
    exhale_slope: float  # m/s, the second after
    kind: str  # normal | deep | smoking


@dataclass
class PathCandidate:
    sequence: TrackedSequence
    dominant_freq: float
    fft_amplitude: float


@dataclass
class MajorPathSelection:
    sequence_id: int
    dominant_freq: float
    fft_amplitude: float
    attempts: int = 1


def _uniform_series(seq: TrackedSequence, t0: float, t1: float, dt: float):
    """Distance series resampled onto a uniform grid (gaps interpolated)."""
    n = int(round((t1 - t0) / dt))
    grid = t0 + np.arange(n) * dt
    return np.interp(grid, seq.times, seq.distances)


def band_concentration(
    seq: TrackedSequence,
    band: tuple[float, float] = (0.16, 0.6),
    frame_period: float = 464.0 / 48000.0,
) -> float:
    """Share of the track's motion energy (0.05-2 Hz) inside the band."""
    if seq.times.size < 16:
        return 0.0
    series = _uniform_series(seq, seq.times[0], seq.times[-1], frame_period)
    if series.size < 16:
        return 0.0
    spectrum = np.abs(np.fft.rfft(series - series.mean())) ** 2
    freqs = np.fft.rfftfreq(series.size, frame_period)
    total = float(np.sum(spectrum[(freqs > 0.05) & (freqs <= 2.0)]))
    if total <= 0:
        return 0.0
    return float(np.sum(spectrum[(freqs >= band[0]) & (freqs <= band[1])])) / total


def qualifying_breath_paths(
    profile: SequenceProfile,
    amplitude_cap: float = 0.025,
    band: tuple[float, float] = (0.16, 0.6),
    dominance_ratio: float = 0.4,
    frame_period: float = 464.0 / 48000.0,
    min_coverage: float = 0.6,
) -> list[PathCandidate]:
    """Tracks in the window that look like breathing.

    A candidate must move less than the amplitude cap, cover most of the
    window, and concentrate its motion energy in the respiration band: the
    band's share of the spectrum (over 0.05-2 Hz) must reach
    ``dominance_ratio``.  Real breathing is quasi-periodic, so its energy
    piles into the band even when the rate wanders; drift, steering wander
    and tracking jitter spread theirs elsewhere.  The dominant frequency
    and amplitude reported are the strongest in-band bin's.
    """
    t0, t1 = profile.t_start, profile.t_end
    span = t1 - t0
    out = []
    for seq in profile.sequences:
        if seq.movement_range >= amplitude_cap:
            continue
        if (seq.times[-1] - seq.times[0]) < min_coverage * span:
            continue
        series = _uniform_series(seq, max(t0, seq.times[0]), min(t1, seq.times[-1]), frame_period)
        if series.size < 16:
            continue
        spectrum = np.abs(np.fft.rfft(series - series.mean()))
        freqs = np.fft.rfftfreq(series.size, frame_period)
        in_band = (freqs >= band[0]) & (freqs <= band[1])
        searched = (freqs > 0.05) & (freqs <= 2.0)
        if not in_band.any() or not searched.any():
            continue
        total = float(np.sum(spectrum[searched] ** 2))
        band_energy = float(np.sum(spectrum[in_band] ** 2))
        if total <= 0 or band_energy < dominance_ratio * total:
            continue
        k = int(np.flatnonzero(in_band)[np.argmax(spectrum[in_band])])
        out.append(PathCandidate(seq, float(freqs[k]), float(spectrum[k])))
    return out


def select_major_breath_path(
    profile: SequenceProfile,
    amplitude_cap: float = 0.025,
    band: tuple[float, float] = (0.16, 0.6),
    dominance_ratio: float = 0.5,
    frame_period: float = 464.0 / 48000.0,
    window_s: float = 60.0,
    attempts: int = 1,
) -> MajorPathSelection | None:
    """The qualifying track with the largest dominant-component amplitude.

    None when nothing qualifies (caller retries on the next minute).
    Raises InsufficientDataError when the window is shorter than required.
    """
    if profile.t_end - profile.t_start < window_s - 1e-9:
        raise InsufficientDataError(
            f"breath analysis window is {profile.t_end - profile.t_start:.1f} s, "
            f"needs {window_s:.0f} s"
        )
    candidates = qualifying_breath_paths(
        profile, amplitude_cap, band, dominance_ratio, frame_period
    )
    if not candidates:
        return None
    best = max(candidates, key=lambda c: c.fft_amplitude)
    return MajorPathSelection(
        sequence_id=best.sequence.id,
        dominant_freq=best.dominant_freq,
        fft_amplitude=best.fft_amplitude,
        attempts=attempts,
    )


def select_troughs(
    times: np.ndarray,
    distances: np.ndarray,
    alpha: float = 0.25,
    min_gap_s: float = 2.0,
    spread_floor: float = 5e-4,
) -> np.ndarray:
    """Two-step trough selection; returns indices into the series.

    Step 0 collects every decreasing-to-increasing sign change.  Step 1
    keeps only troughs at depth: distances above u = mean - alpha * std of
    the trough population are discarded (skipped when the population spread
    is under ``spread_floor``, i.e. the series is clean and every trough is
    real).  Step 2 walks troughs in time order and, whenever two neighbours
    are closer than ``min_gap_s``, drops the shallower (larger-distance)
    one - a single breath lasts 2 s or more.
    """
    if times.size < 3:
        return np.empty(0, dtype=int)
    d = np.diff(distances)
    sign = np.sign(d)
    # collapse flat runs so plateaus count once
    idx = []
    prev = 0.0
    for i in range(sign.size):
        s = sign[i]
        if s == 0:
            continue
        if prev < 0 and s > 0:
            idx.append(i)
        prev = s
    troughs = np.asarray(idx, dtype=int)
    if troughs.size == 0:
        return troughs
    # step 1: depth threshold from the trough population
    depths = distances[troughs]
    spread = float(depths.std())
    if spread >= spread_floor:
        u = float(depths.mean()) - alpha * spread
        troughs = troughs[depths <= u]
    if troughs.size == 0:
        return troughs
    # step 2: enforce the minimum breath spacing, keep the deeper trough
    kept = [troughs[0]]
    for t in troughs[1:]:
        if times[t] - times[kept[-1]] < min_gap_s:
            if distances[t] < distances[kept[-1]]:
                kept[-1] = t
        else:
            kept.append(t)
    return np.asarray(kept, dtype=int)


def breath_baseline(distances: np.ndarray, n_peaks: int = 10) -> float:
    """Exhaled-rest distance: mean of the top ``n_peaks`` local maxima."""
    d = np.diff(distances)
    sign = np.sign(d)
    peaks = []
    prev = 0.0
    for i in range(sign.size):
        s = sign[i]
        if s == 0:
            continue
        if prev > 0 and s < 0:
            peaks.append(distances[i])
        prev = s
    if not peaks:
        return float(distances.max())
    top = sorted(peaks, reverse=True)[:n_peaks]
    return float(np.mean(top))


def classify_breath(
    times: np.ndarray,
    distances: np.ndarray,
    trough_idx: int,
    baseline: float,
    depth_cutoff: float = 0.014,
    asym_threshold: float = 0.3,
    slope_window_s: float = 1.0,
) -> BreathEvent | None:
    """Classify one breath; None when the trough sits too close to the
    series boundary for the slope windows.

    depth <= cutoff: normal.  Deeper breaths split on slope asymmetry: a
    smoking drag inhales faster than it exhales, so the inhale-side slope
    must exceed the exhale-side by more than the relative threshold;
    symmetric deep breaths stay "deep".
    """
    t = times[trough_idx]
    if t - times[0] < slope_window_s or times[-1] - t < slope_window_s:
        return None
    depth = baseline - float(distances[trough_idx])
    d_before = float(np.interp(t - slope_window_s, times, distances))
    d_after = float(np.interp(t + slope_window_s, times, distances))
    inhale = abs(d_before - distances[trough_idx]) / slope_window_s
    exhale = abs(d_after - distances[trough_idx]) / slope_window_s
    if depth <= depth_cutoff:
        kind = "normal"
    else:
        top = max(inhale, exhale)
        if top > 0 and (inhale - exhale) / top > asym_threshold:
            kind = "smoking"
        else:
            kind = "deep"
    return BreathEvent(
        trough_time=float(t),
        depth=depth,
        inhale_slope=inhale,
        exhale_slope=exhale,
        kind=kind,
    )


def analyze_breath_path(
    seq: TrackedSequence,
    alpha: float = 0.25,
    min_gap_s: float = 2.0,
    spread_floor: float = 5e-4,
    depth_cutoff: float = 0.014,
    asym_threshold: float = 0.3,
    slope_window_s: float = 1.0,
    baseline_peaks: int = 10,
) -> list[BreathEvent]:
    """Troughs + classification over a whole tracked breath path."""
    if seq.times.size < 3 or seq.duration < 10.0:
        return []
    troughs = select_troughs(seq.times, seq.distances, alpha, min_gap_s, spread_floor)
    baseline = breath_baseline(seq.distances, baseline_peaks)
    events = []
    for idx in troughs:
        ev = classify_breath(
            seq.times,
            seq.distances,
            int(idx),
            baseline,
            depth_cutoff,
            asym_threshold,
            slope_window_s,
        )
        if ev is not None:
            events.append(ev)
    return events


def export_breath_events(path, events: list[BreathEvent]) -> None:
    """Time-ordered text log: trough time, depth, slopes, kind."""
    with open(path, "w") as fh:
        fh.write("# trough_time_s depth_m inhale_slope_m_s exhale_slope_m_s kind\n")
        for ev in sorted(events, key=lambda e: e.trough_time):
            fh.write(
                f"{ev.trough_time:.3f} {ev.depth:.5f} {ev.inhale_slope:.5f} "
                f"{ev.exhale_slope:.5f} {ev.kind}\n"
            )
