"""End-to-end detection: received audio in, smoking events out.

Order of operations mirrors the online sensing flow: band-pass -> locate
the first line-of-sight chirp (time zero) -> per-frame envelope correlation
profiles -> peak tracking -> in parallel: breath analysis on the major
breath path and CNN classification of rasterized motion windows -> fusion
(composite + periodicity per the configured mode).

Breath-path bookkeeping: multipath copies of one chest cluster within
``copilot_cluster_gap`` of each other; with several clusters (driver plus
co-pilot) the nearest cluster is the driver's, and within it the
largest-amplitude path wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from smokesonar import features, fusion, respiration
from smokesonar.audio import SampleBuffer
from smokesonar.cnn import CnnModel
from smokesonar.config import PipelineConfig
from smokesonar.errors import DataError
from smokesonar.frontend import bandpass, windowed_chirp
from smokesonar.fusion import SmokingEvent, SmokingEventDecision, SmokingMotion
from smokesonar.ranging import analytic_reference, detect_peaks, envelope_profile, iter_frame_windows
from smokesonar.respiration import BreathEvent, MajorPathSelection
from smokesonar.sync import find_start_offset
from smokesonar.tracking import SequenceTracker, TrackedSequence, stitch_sequences, window_profile


@dataclass
class DetectionResult:
    offset: int
    sync_evaluations: int
    sync_fallback: bool
    sequences: list[TrackedSequence]
    major_path: MajorPathSelection | None
    major_path_attempts: int
    breath_events: list[BreathEvent]
    hand_events: list[features.HandEvent]
    motions: list[SmokingMotion]
    decisions: list[SmokingEventDecision]
    events: list[SmokingEvent]
    mode: str
    config_hash: str
    notes: list[str] = field(default_factory=list)


def track_buffer(received: SampleBuffer, cfg: PipelineConfig) -> tuple[int, object, list[TrackedSequence]]:
    """Band-pass, sync, profile, and track; the common heavy front half."""
    if received.sample_rate != cfg.chirp.sample_rate:
        raise DataError(
            f"input sampled at {received.sample_rate} Hz, config expects {cfg.chirp.sample_rate} Hz"
        )
    filtered = bandpass(received, cfg.bandpass.low, cfg.bandpass.high, cfg.bandpass.transition)
    ref = windowed_chirp(cfg.chirp)
    sync_res = find_start_offset(
        filtered,
        ref,
        band=(cfg.chirp.f_low, cfg.chirp.f_high),
        max_evaluations=cfg.sync.max_evaluations,
        energy_gate=cfg.sync.energy_gate,
        scan_limit=int(cfg.sync.scan_limit_s * received.sample_rate),
    )
    reference = analytic_reference(ref)
    unwrap = (
        cfg.speed_of_sound / (2.0 * cfg.chirp.carrier_freq) if cfg.tracking.phase_unwrap else None
    )
    tracker = SequenceTracker(
        gate=cfg.tracking.gate,
        max_gap=cfg.tracking.max_gap,
        min_duration=cfg.tracking.min_duration,
        static_threshold=cfg.tracking.static_threshold,
        max_distance=cfg.tracking.max_distance,
        unwrap_step=unwrap,
        min_fill=cfg.tracking.min_fill,
        frame_period=cfg.chirp.frame_period,
        prune=not cfg.tracking.stitch,
    )
    sequences: list[TrackedSequence] = []
    for k, t, window in iter_frame_windows(filtered, sync_res.offset, cfg.chirp):
        profile = envelope_profile(ref, window, k, t, reference)
        detect_peaks(
            profile,
            cfg.chirp.sample_rate,
            min_rcc=cfg.ranging.min_rcc,
            min_separation=cfg.ranging.min_separation,
            blanking=cfg.ranging.blanking,
            speed_of_sound=cfg.speed_of_sound,
            carrier_freq=cfg.chirp.carrier_freq,
            skirt_window=cfg.ranging.skirt_window,
            skirt_ratio=cfg.ranging.skirt_ratio,
        )
        sequences.extend(tracker.update(k, t, profile.peaks))
    sequences.extend(tracker.finish())
    if cfg.tracking.stitch:
        sequences = [
            s for s in stitch_sequences(sequences) if tracker.survives(s)
        ]
    sequences.sort(key=lambda s: s.id)
    return sync_res.offset, sync_res, sequences


def _cluster_paths(paths: list, gap: float) -> list[list]:
    """Single-linkage 1-D clustering of breath paths by mean distance."""
    ordered = sorted(paths, key=lambda c: c.sequence.mean_distance)
    clusters: list[list] = []
    for cand in ordered:
        if clusters and (
            cand.sequence.mean_distance - clusters[-1][-1].sequence.mean_distance <= gap
        ):
            clusters[-1].append(cand)
        else:
            clusters.append([cand])
    return clusters


@dataclass
class BreathPaths:
    selection: MajorPathSelection | None
    attempts: int
    chain_ids: list[int]  # major path plus its continuations after track breaks
    breath_ids: list[int]  # every breath-like id (all clusters), for raster hygiene
    notes: list[str]


def find_breath_paths(
    sequences: list[TrackedSequence], cfg: PipelineConfig, t_stream_end: float
) -> BreathPaths:
    """Major breath path with minute-by-minute retries and co-pilot handling.

    The chest track occasionally re-opens under a new id (occlusions, jolts),
    so after the initial selection every later breath-like fragment at the
    driver's distance joins the analysis chain.  Every qualifying path of
    any cluster lands in breath_ids so that none of them (driver, multipath
    copies, co-pilot) leak into the motion rasters.
    """
    r = cfg.respiration
    frame_period = cfg.chirp.frame_period

    def window_candidates(t0: float):
        profile = window_profile(sequences, t0, t0 + r.window_s)
        return respiration.qualifying_breath_paths(
            profile,
            amplitude_cap=r.amplitude_cap,
            band=(r.band_low, r.band_high),
            dominance_ratio=r.dominance_ratio,
            frame_period=frame_period,
        )

    window_starts: list[float] = []
    t0 = r.analysis_start_s
    while t0 + r.window_s <= t_stream_end + 1e-9:
        window_starts.append(t0)
        t0 += r.retry_hop_s
    # a final window clamped to the stream end: short streams deserve a shot
    # at their last minute even when it straddles the retry grid
    t_last = t_stream_end - r.window_s
    if t_last > r.analysis_start_s and (
        not window_starts or t_last > window_starts[-1] + 1e-9
    ):
        window_starts.append(t_last)

    notes: list[str] = []
    attempts = 0
    selection = None
    driver_distance = None
    chain_ids: list[int] = []
    breath_ids: set[int] = set()
    for t0 in window_starts:
        candidates = window_candidates(t0)
        if selection is None:
            attempts += 1
        if candidates:
            breath_ids.update(c.sequence.id for c in candidates)
            clusters = _cluster_paths(candidates, r.copilot_cluster_gap)
            if selection is None:
                if len(clusters) > 1:
                    notes.append(
                        f"{len(clusters)} breath clusters; taking the nearest as the driver"
                    )
                driver = clusters[0]
                best = max(driver, key=lambda c: c.fft_amplitude)
                selection = MajorPathSelection(
                    sequence_id=best.sequence.id,
                    dominant_freq=best.dominant_freq,
                    fft_amplitude=best.fft_amplitude,
                    attempts=attempts,
                )
                driver_distance = best.sequence.mean_distance
                chain_ids.append(best.sequence.id)
                break
    if selection is None:
        notes.append("no major breath path found")
        return BreathPaths(None, attempts, [], sorted(breath_ids), notes)
    # chain the driver's chest across track breaks: any breath-like fragment
    # at the driver's distance continues the analysis regardless of window
    # framing (fragments rarely line up with the minute grid)
    for seq in sequences:
        if seq.id in chain_ids:
            continue
        if abs(seq.mean_distance - driver_distance) > r.copilot_cluster_gap:
            continue
        if seq.movement_range >= r.amplitude_cap or seq.duration < 10.0:
            continue
        if (
            respiration.band_concentration(seq, (r.band_low, r.band_high), frame_period)
            >= r.dominance_ratio
        ):
            chain_ids.append(seq.id)
            breath_ids.add(seq.id)
    # remaining windows only feed raster hygiene
    for t0 in window_starts:
        breath_ids.update(c.sequence.id for c in window_candidates(t0))
    return BreathPaths(selection, attempts, chain_ids, sorted(breath_ids), notes)


def run_detection(
    received: SampleBuffer,
    cfg: PipelineConfig,
    model: CnnModel | None = None,
) -> DetectionResult:
    """The full detector.  ``model`` may be omitted in Bp3 mode only."""
    mode = cfg.fusion.mode
    if model is None and mode != "Bp3":
        raise DataError(f"mode {mode} classifies hand movements and needs a model")
    offset, sync_res, sequences = track_buffer(received, cfg)
    t_end = max((s.times[-1] for s in sequences), default=0.0)

    paths = find_breath_paths(sequences, cfg, t_end)
    major, attempts, breath_ids, notes = (
        paths.selection,
        paths.attempts,
        paths.breath_ids,
        paths.notes,
    )
    breath_events: list[BreathEvent] = []
    if major is not None:
        r = cfg.respiration
        by_id = {s.id: s for s in sequences}
        for chain_id in paths.chain_ids:
            events = respiration.analyze_breath_path(
                by_id[chain_id],
                alpha=r.trough_alpha,
                min_gap_s=r.min_trough_gap_s,
                spread_floor=r.trough_spread_floor,
                depth_cutoff=r.depth_cutoff,
                asym_threshold=r.asym_threshold,
                slope_window_s=r.slope_window_s,
                baseline_peaks=r.baseline_peaks,
            )
            for ev in events:
                # chained sequences overlap a little; keep the first sighting
                if all(abs(ev.trough_time - b.trough_time) > 1.0 for b in breath_events):
                    breath_events.append(ev)
        breath_events.sort(key=lambda b: b.trough_time)

    hand_events: list[features.HandEvent] = []
    if model is not None:
        seg = cfg.segmentation
        motion_seqs = [s for s in sequences if s.id not in set(breath_ids)]
        matrices = features.segment_and_rasterize(
            motion_seqs,
            0.0,
            t_end,
            window_s=seg.window_s,
            hop_s=seg.hop_s,
            grid_size=seg.grid_size,
            max_distance=cfg.tracking.max_distance,
        )
        hand_events = features.classify_segments(
            matrices, model, window_s=seg.window_s, threshold=seg.positive_threshold
        )

    f = cfg.fusion
    smoking_breaths = [b for b in breath_events if b.kind == "smoking"]
    if mode == "Hp3":
        motions = [
            SmokingMotion(motion_time=h.t_start, hand_event=h) for h in hand_events
        ]
        lam = f.lam
    elif mode == "Bp3":
        motions = [
            SmokingMotion(motion_time=b.trough_time, breath=b) for b in smoking_breaths
        ]
        lam = f.lam
    else:  # HBp, HBp3: composite analysis
        motions = []
        for h in hand_events:
            m = fusion.composite_check(h, breath_events, f.composite_window_s)
            if m is not None:
                motions.append(m)
        lam = 1 if mode == "HBp" else f.lam
    decisions = fusion.periodicity_check(
        motions,
        lam=lam,
        tolerance=f.interval_tolerance,
        interval_band=(f.interval_min_s, f.interval_max_s),
    )
    events = fusion.merge_event_decisions(decisions, f.episode_merge_gap_s)
    return DetectionResult(
        offset=offset,
        sync_evaluations=sync_res.evaluations,
        sync_fallback=sync_res.fallback_used,
        sequences=sequences,
        major_path=major,
        major_path_attempts=attempts,
        breath_events=breath_events,
        hand_events=hand_events,
        motions=motions,
        decisions=decisions,
        events=events,
        mode=mode,
        config_hash=cfg.config_hash(),
        notes=notes,
    )


def rerun_fusion(
    result: DetectionResult, cfg: PipelineConfig, mode: str, lam: int | None = None
) -> list[SmokingEvent]:
    """Re-run only the fusion stage of an existing detection under another
    mode or lambda; the expensive DSP/CNN stages are reused as-is."""
    f = cfg.fusion
    smoking_breaths = [b for b in result.breath_events if b.kind == "smoking"]
    if mode == "Hp3":
        motions = [SmokingMotion(h.t_start, hand_event=h) for h in result.hand_events]
        use_lam = lam if lam is not None else f.lam
    elif mode == "Bp3":
        motions = [SmokingMotion(b.trough_time, breath=b) for b in smoking_breaths]
        use_lam = lam if lam is not None else f.lam
    else:
        motions = []
        for h in result.hand_events:
            m = fusion.composite_check(h, result.breath_events, f.composite_window_s)
            if m is not None:
                motions.append(m)
        use_lam = 1 if mode == "HBp" else (lam if lam is not None else f.lam)
    decisions = fusion.periodicity_check(
        motions,
        lam=use_lam,
        tolerance=f.interval_tolerance,
        interval_band=(f.interval_min_s, f.interval_max_s),
    )
    return fusion.merge_event_decisions(decisions, f.episode_merge_gap_s)


def detection_records(result: DetectionResult) -> str:
    """Line-oriented detection log: events, then decisions, then a summary."""
    lines = [
        "# smokesonar detection log",
        f"mode {result.mode}",
        f"config_hash {result.config_hash}",
        f"start_offset {result.offset}",
        f"sync_evaluations {result.sync_evaluations} fallback {int(result.sync_fallback)}",
        f"major_path {result.major_path.sequence_id if result.major_path else 'none'}"
        f" attempts {result.major_path_attempts}",
        f"sequences {len(result.sequences)} breaths {len(result.breath_events)}"
        f" hand_events {len(result.hand_events)} motions {len(result.motions)}",
    ]
    for note in result.notes:
        lines.append(f"note {note}")
    for ev in result.events:
        times = ",".join(f"{t:.2f}" for t in ev.motion_times)
        lines.append(f"event {ev.t_start:.2f} {ev.t_end:.2f} motions {times}")
    for dec in result.decisions:
        gaps = ",".join(f"{g:.2f}" for g in dec.intervals)
        lines.append(
            f"decision {dec.verdict} at {dec.t_start:.2f}-{dec.t_end:.2f}"
            f" intervals {gaps}{' reason ' + dec.reject_reason if dec.reject_reason else ''}"
        )
    return "\n".join(lines) + "\n"
