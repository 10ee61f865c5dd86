"""Synthetic in-car acoustic scenes with exact ground truth.

A scene is a set of reflectors (chest, hands, clutter) with scripted
distance trajectories.  Rendering places, per frame, a fractionally delayed
copy of the emitted chirp for each reflector at round-trip delay 2*d/v,
scaled by reflectivity/d^2, plus the line-of-sight copy at the configured
start offset and white Gaussian noise at a configured in-pulse SNR.
Trajectories are quasi-static within one 9.7 ms frame; Doppler at chest and
hand speeds is negligible over a 1.33 ms chirp.

Chest motion uses piecewise raised-cosine breaths with independent inhale
and exhale half-periods, so slope asymmetry between the two phases is a
generator-controlled property.  Inhaling moves the chest toward the phone
(distance shrinks); troughs of the distance series are full inhalation.

Ground truth records hand-motion intervals, every breath (trough time,
depth, kind), smoking motion times, smoking event spans, and per-reflector
distance tracks sampled on the frame grid.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from smokesonar import _kernels
from smokesonar.audio import SampleBuffer, write_wav
from smokesonar.errors import ConfigError, DataError
from smokesonar.frontend import SPEED_OF_SOUND, ChirpConfig, windowed_chirp

SCENE_SCHEMA_VERSION = 1
RANGE_LIMIT = 1.4  # trajectories must stay inside (0, RANGE_LIMIT) meters


@dataclass
class BreathSpec:
    """One breath: inhale then exhale, raised-cosine halves."""

    t_start: float
    inhale_s: float
    exhale_s: float
    depth: float  # meters
    kind: str  # normal | deep | smoking | sigh

    @property
    def t_trough(self) -> float:
        return self.t_start + self.inhale_s

    @property
    def t_end(self) -> float:
        return self.t_start + self.inhale_s + self.exhale_s


@dataclass
class MotionSpec:
    """One hand excursion: rest -> mouth (up), hold, mouth -> rest (down)."""

    t_start: float
    up_s: float
    hold_s: float
    down_s: float

    @property
    def t_end(self) -> float:
        return self.t_start + self.up_s + self.hold_s + self.down_s


@dataclass
class ReflectorSpec:
    kind: str  # static | chest | hand | confuser | scripted
    base_distance: float = 0.5
    reflectivity: float = 0.01
    label: str = "driver"
    # chest: explicit breath plan, or periodic fallback (amplitude/period/asymmetry)
    breaths: list[BreathSpec] = field(default_factory=list)
    amplitude: float = 0.01
    period: float = 4.0
    asymmetry: float = 1.0  # inhale_s / exhale_s for the periodic plan
    multipath: list[tuple[float, float, float]] = field(default_factory=list)
    # hand / confuser
    rest_distance: float = 0.8
    mouth_distance: float = 0.6
    motions: list[MotionSpec] = field(default_factory=list)
    template: str = "drink"  # confuser only: drink | eat | steering
    wander_amplitude: float = 0.03
    wander_period: float = 11.0
    # scripted
    times: list[float] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in {"static", "chest", "hand", "confuser", "scripted"}:
            raise ConfigError(f"unknown reflector kind {self.kind!r}")
        if self.kind == "chest" and not self.breaths:
            if not (1.5 <= self.period <= 8.0):
                raise ConfigError(f"chest period must lie in [1.5, 8] s, got {self.period}")
        if self.kind == "scripted" and len(self.times) != len(self.distances):
            raise ConfigError("scripted reflector needs matching times/distances")


@dataclass
class SceneSpec:
    duration: float
    start_offset: int = 0
    los_gain: float = 0.3
    noise_snr: float | None = 15.0  # dB, in-pulse; None disables noise
    rng_seed: int = 0
    reflectors: list[ReflectorSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError(f"scene duration must be positive, got {self.duration}")
        if self.start_offset < 0:
            raise ConfigError(f"start_offset must be >= 0, got {self.start_offset}")


@dataclass
class ReflectorTrack:
    kind: str
    label: str
    distances: np.ndarray  # meters, one per frame


@dataclass
class GroundTruth:
    duration: float
    frame_period: float
    hand_intervals: list[tuple[float, float]] = field(default_factory=list)
    other_motion_intervals: list[tuple[float, float]] = field(default_factory=list)
    breath_events: list[tuple[float, float, str]] = field(default_factory=list)
    smoking_motion_times: list[float] = field(default_factory=list)
    smoking_event_spans: list[tuple[float, float]] = field(default_factory=list)
    tracks: list[ReflectorTrack] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Trajectory evaluation
# ---------------------------------------------------------------------------

def _raised_cosine_step(phase: np.ndarray) -> np.ndarray:
    """Smooth 0 -> 1 transition for phase in [0, 1]."""
    return 0.5 * (1.0 - np.cos(np.pi * np.clip(phase, 0.0, 1.0)))


def periodic_breath_plan(
    duration: float, amplitude: float, period: float, asymmetry: float = 1.0
) -> list[BreathSpec]:
    """Back-to-back breaths filling the scene."""
    inhale = period * asymmetry / (1.0 + asymmetry)
    exhale = period - inhale
    kind = "deep" if amplitude > 0.014 else "normal"
    plan = []
    t = 0.0
    while t + period <= duration:
        plan.append(BreathSpec(t, inhale, exhale, amplitude, kind))
        t += period
    return plan


def chest_distance(t: np.ndarray, base: float, plan: list[BreathSpec]) -> np.ndarray:
    d = np.full(t.shape, base, dtype=np.float64)
    for br in plan:
        sel = (t >= br.t_start) & (t < br.t_trough)
        if sel.any():
            d[sel] = base - br.depth * _raised_cosine_step((t[sel] - br.t_start) / br.inhale_s)
        sel = (t >= br.t_trough) & (t < br.t_end)
        if sel.any():
            d[sel] = base - br.depth * (
                1.0 - _raised_cosine_step((t[sel] - br.t_trough) / br.exhale_s)
            )
    return d


def hand_distance(
    t: np.ndarray, rest: float, mouth: float, motions: list[MotionSpec]
) -> np.ndarray:
    d = np.full(t.shape, rest, dtype=np.float64)
    span = mouth - rest
    for m in motions:
        sel = (t >= m.t_start) & (t < m.t_start + m.up_s)
        if sel.any():
            d[sel] = rest + span * _raised_cosine_step((t[sel] - m.t_start) / m.up_s)
        sel = (t >= m.t_start + m.up_s) & (t < m.t_start + m.up_s + m.hold_s)
        if sel.any():
            d[sel] = mouth
        t_down = m.t_start + m.up_s + m.hold_s
        sel = (t >= t_down) & (t < t_down + m.down_s)
        if sel.any():
            d[sel] = mouth - span * _raised_cosine_step((t[sel] - t_down) / m.down_s)
    return d


def steering_distance(
    t: np.ndarray, base: float, amplitude: float, period: float, phase: float = 0.0
) -> np.ndarray:
    return (
        base
        + amplitude * np.sin(2.0 * np.pi * t / period + phase)
        + 0.4 * amplitude * np.sin(2.0 * np.pi * t / (period * 0.37) + 2.1 * phase)
    )


def reflector_tracks(
    spec: ReflectorSpec, t: np.ndarray, duration: float
) -> list[ReflectorTrack]:
    """Distance-vs-time for one reflector spec, one track per rendered path."""
    if spec.kind == "static":
        return [ReflectorTrack("static", spec.label, np.full(t.shape, spec.base_distance))]
    if spec.kind == "chest":
        plan = spec.breaths or periodic_breath_plan(
            duration, spec.amplitude, spec.period, spec.asymmetry
        )
        direct = chest_distance(t, spec.base_distance, plan)
        tracks = [ReflectorTrack("chest", spec.label, direct)]
        for offset, motion_scale, _gain in spec.multipath:
            copy = (spec.base_distance + offset) - motion_scale * (spec.base_distance - direct)
            tracks.append(ReflectorTrack("chest_multipath", spec.label, copy))
        return tracks
    if spec.kind == "hand":
        return [
            ReflectorTrack(
                "hand", spec.label, hand_distance(t, spec.rest_distance, spec.mouth_distance, spec.motions)
            )
        ]
    if spec.kind == "confuser":
        if spec.template == "steering":
            d = steering_distance(t, spec.base_distance, spec.wander_amplitude, spec.wander_period)
        else:
            d = hand_distance(t, spec.rest_distance, spec.mouth_distance, spec.motions)
        return [ReflectorTrack("confuser", spec.label, d)]
    if spec.kind == "scripted":
        return [
            ReflectorTrack(
                "scripted",
                spec.label,
                np.interp(t, np.asarray(spec.times), np.asarray(spec.distances)),
            )
        ]
    raise ConfigError(f"unknown reflector kind {spec.kind!r}")


def _track_gains(spec: ReflectorSpec, tracks: list[ReflectorTrack]) -> list[float]:
    gains = [spec.reflectivity]
    if spec.kind == "chest":
        gains += [spec.reflectivity * g for _, _, g in spec.multipath]
    return gains[: len(tracks)] + [spec.reflectivity] * (len(tracks) - len(gains))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_DELAY_PAD = 192  # fractional-delay block length: 64-sample pulse + ring-down room


def _delayed_pulse_blocks(pulse: np.ndarray, fracs: np.ndarray) -> np.ndarray:
    """Exact band-limited fractional delays of the pulse, one row per frac.

    DFT phase-shift over a zero-padded block; the taper on the pulse keeps
    wrap-around ringing negligible.
    """
    spectrum = np.fft.rfft(pulse, _DELAY_PAD)
    omega = 2.0 * np.pi * np.fft.rfftfreq(_DELAY_PAD)
    shifts = np.exp(-1j * omega[None, :] * fracs[:, None])
    return np.fft.irfft(spectrum[None, :] * shifts, _DELAY_PAD, axis=1)


def render_scene(
    spec: SceneSpec,
    cfg: ChirpConfig | None = None,
    speed_of_sound: float = SPEED_OF_SOUND,
    include_tracks: bool = True,
) -> tuple[SampleBuffer, GroundTruth]:
    """Render received audio plus ground truth for a scene.

    The received stream is: per frame, the LOS chirp at the start offset and
    one delayed, 1/d^2-attenuated chirp copy per reflector path, then white
    noise sized so the stated SNR holds over the chirp-occupied samples of
    the combined echoes.
    """
    cfg = cfg or ChirpConfig()
    fs = cfg.sample_rate
    frame_len = cfg.frame_len
    n_frames = int(spec.duration * fs) // frame_len
    if n_frames < 1:
        raise ConfigError("scene shorter than one frame")
    t_frames = np.arange(n_frames) * cfg.frame_period
    pulse = windowed_chirp(cfg).samples

    all_tracks: list[ReflectorTrack] = []
    all_gains: list[float] = []
    for refl in spec.reflectors:
        tracks = reflector_tracks(refl, t_frames, spec.duration)
        gains = _track_gains(refl, tracks)
        for tr, g in zip(tracks, gains):
            if tr.distances.min() <= 0.0 or tr.distances.max() >= RANGE_LIMIT:
                raise DataError(
                    f"{tr.kind} trajectory leaves (0, {RANGE_LIMIT}) m: "
                    f"[{tr.distances.min():.3f}, {tr.distances.max():.3f}]"
                )
            all_tracks.append(tr)
            all_gains.append(g)

    n_out = spec.start_offset + (n_frames + 1) * frame_len
    echoes = np.zeros(n_out)
    frame_origin = spec.start_offset + np.arange(n_frames, dtype=np.int64) * frame_len
    pulse_rms = float(np.sqrt(np.mean(pulse * pulse)))
    track_levels = []
    for tr, g in zip(all_tracks, all_gains):
        tau = 2.0 * tr.distances / speed_of_sound * fs
        tau_int = np.floor(tau).astype(np.int64)
        blocks = _delayed_pulse_blocks(pulse, tau - tau_int)
        amp = g / (tr.distances * tr.distances)
        track_levels.append(float(np.median(amp)) * pulse_rms)
        _kernels.scatter_add_blocks(echoes, blocks, frame_origin + tau_int, amp)

    received = echoes.copy()
    if spec.los_gain:
        los_block = np.zeros((1, _DELAY_PAD))
        los_block[0, : pulse.size] = pulse
        _kernels.scatter_add_blocks(
            received,
            np.repeat(los_block, n_frames, axis=0),
            frame_origin,
            np.full(n_frames, float(spec.los_gain)),
        )
    if spec.noise_snr is not None and all_tracks:
        # SNR is referenced to the driver's chest echo (the sensing-critical
        # target); a loud clutter echo must not raise the noise floor
        ref_level = None
        for tr, level in zip(all_tracks, track_levels):
            if tr.kind == "chest" and tr.label == "driver":
                ref_level = level
                break
        if ref_level is None:
            ref_level = max(track_levels)
        sigma = ref_level * 10.0 ** (-spec.noise_snr / 20.0)
        rng = np.random.default_rng(spec.rng_seed)
        received = received + rng.normal(0.0, sigma, n_out)

    peak = np.abs(received).max() if received.size else 0.0
    if peak > 0.98:
        received = received * (0.9 / peak)

    truth = _ground_truth(spec, cfg, all_tracks if include_tracks else [])
    return SampleBuffer(received, fs), truth


def _ground_truth(
    spec: SceneSpec, cfg: ChirpConfig, tracks: list[ReflectorTrack]
) -> GroundTruth:
    truth = GroundTruth(duration=spec.duration, frame_period=cfg.frame_period, tracks=tracks)
    composite_window = 8.0
    for refl in spec.reflectors:
        if refl.kind == "hand":
            truth.hand_intervals += [(m.t_start, m.t_end) for m in refl.motions]
        elif refl.kind == "confuser" and refl.template != "steering":
            truth.other_motion_intervals += [(m.t_start, m.t_end) for m in refl.motions]
        if refl.kind == "chest" and refl.label == "driver":
            plan = refl.breaths or periodic_breath_plan(
                spec.duration, refl.amplitude, refl.period, refl.asymmetry
            )
            truth.breath_events += [(b.t_trough, b.depth, b.kind) for b in plan]
    truth.hand_intervals.sort()
    truth.other_motion_intervals.sort()
    truth.breath_events.sort()
    smoking_troughs = [t for t, _, kind in truth.breath_events if kind == "smoking"]
    for t0, t1 in truth.hand_intervals:
        if any(t1 < bt <= t1 + composite_window for bt in smoking_troughs):
            truth.smoking_motion_times.append(t0)
    if len(truth.smoking_motion_times) >= 3:
        truth.smoking_event_spans.append(
            (truth.smoking_motion_times[0], truth.smoking_motion_times[-1])
        )
    return truth


# ---------------------------------------------------------------------------
# Scene families
# ---------------------------------------------------------------------------

FAMILIES = ("smoking", "eating", "drinking", "deep_breathing", "steering", "copilot")


def _fill_breaths(
    rng: np.random.Generator,
    duration: float,
    special: list[BreathSpec],
    depth_range=(0.0085, 0.011),
    deep_prob: float = 0.0,
) -> list[BreathSpec]:
    """Normal breathing filling the gaps around pre-placed special breaths."""
    pruned: list[BreathSpec] = []
    for b in sorted(special, key=lambda b: b.t_start):
        if b.t_end >= duration:
            continue
        if pruned and b.t_start < pruned[-1].t_end + 0.2:
            continue  # overlapping specials: keep the earlier one
        pruned.append(b)
    plan: list[BreathSpec] = []
    t = float(rng.uniform(0.0, 0.5))
    idx = 0
    while t < duration - 4.5:
        if idx < len(pruned) and t + 4.2 > pruned[idx].t_start:
            plan.append(pruned[idx])
            t = pruned[idx].t_end + float(rng.uniform(0.2, 0.8))
            idx += 1
            continue
        if deep_prob > 0 and rng.uniform() < deep_prob:
            half = float(rng.uniform(1.7, 2.1))
            plan.append(BreathSpec(t, half, half, float(rng.uniform(0.017, 0.020)), "deep"))
            t += 2 * half + float(rng.uniform(0.1, 0.5))
        else:
            inhale = float(rng.uniform(1.2, 1.7))
            exhale = inhale * float(rng.uniform(0.95, 1.05))
            plan.append(
                BreathSpec(t, inhale, exhale, float(rng.uniform(*depth_range)), "normal")
            )
            t += inhale + exhale + float(rng.uniform(0.05, 0.4))
    plan.extend(pruned[idx:])
    return sorted(plan, key=lambda b: b.t_start)


def _smoking_breath(rng: np.random.Generator, t_start: float) -> BreathSpec:
    return BreathSpec(
        t_start=t_start,
        inhale_s=float(rng.uniform(1.2, 1.6)),
        exhale_s=float(rng.uniform(2.7, 3.4)),
        depth=float(rng.uniform(0.017, 0.020)),
        kind="smoking",
    )


def _sigh_breath(rng: np.random.Generator, t_start: float) -> BreathSpec:
    # deep breath with mildly faster inhale; shaped like a smoking breath
    return BreathSpec(
        t_start=t_start,
        inhale_s=float(rng.uniform(1.2, 1.6)),
        exhale_s=float(rng.uniform(2.6, 3.2)),
        depth=float(rng.uniform(0.016, 0.019)),
        kind="sigh",
    )


def _geometry(rng: np.random.Generator) -> dict:
    # range resolution is v/(2B) ~ 8.6 cm: the mouth must sit far enough
    # from the chest that a held cigarette doesn't bias the breath track,
    # and nothing may park within ~6 cm of the hand's rest position
    chest = float(rng.uniform(0.45, 0.53))
    mouth = chest + float(rng.uniform(0.13, 0.17))
    rest = mouth + float(rng.uniform(0.15, 0.22))
    return {"chest": chest, "mouth": mouth, "rest": rest}


def _chest_multipath(
    rng: np.random.Generator, geo: dict | None = None
) -> list[tuple[float, float, float]]:
    """2-3 weaker copies of the chest motion at longer path lengths, kept
    clear of the mouth and rest positions so parked hands don't collide."""
    n = int(rng.integers(2, 4))
    out = []
    keepout = []
    if geo is not None:
        keepout = [geo["mouth"], geo["rest"]]
    base = geo["chest"] if geo is not None else 0.5
    for _ in range(n):
        for _attempt in range(20):
            offset = float(rng.uniform(0.16, 0.34))
            if all(abs(base + offset - k) >= 0.06 for k in keepout):
                break
        out.append(
            (offset, float(rng.uniform(0.4, 0.8)), float(rng.uniform(0.25, 0.5)))
        )
    return out


def _hand_motion(rng: np.random.Generator, t_start: float) -> MotionSpec:
    return MotionSpec(
        t_start=t_start,
        up_s=float(rng.uniform(0.7, 1.1)),
        hold_s=float(rng.uniform(0.6, 1.4)),
        down_s=float(rng.uniform(0.7, 1.1)),
    )


def _drink_motion(rng: np.random.Generator, t_start: float) -> MotionSpec:
    return MotionSpec(
        t_start=t_start,
        up_s=float(rng.uniform(0.7, 1.2)),
        hold_s=float(rng.uniform(0.8, 3.2)),
        down_s=float(rng.uniform(0.7, 1.2)),
    )


def _motion_schedule(
    rng: np.random.Generator, n: int, lead: float, base_interval: float, jitter: float
) -> list[float]:
    times = []
    t = lead + float(rng.uniform(0.0, 3.0))
    for _ in range(n):
        times.append(t)
        t += base_interval + float(rng.uniform(-jitter, jitter))
    return times


def make_scene(family: str, seed: int, duration: float | None = None) -> SceneSpec:
    """One deterministic scene of the given family."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown scene family {family!r}; known: {FAMILIES}")
    rng = np.random.default_rng(seed)
    geo = _geometry(rng)
    start_offset = int(rng.integers(0, 900))
    reflectors = [
        ReflectorSpec(kind="static", base_distance=float(rng.uniform(1.04, 1.25)),
                      reflectivity=float(rng.uniform(0.006, 0.012))),
    ]
    chest_gain = float(rng.uniform(0.008, 0.012))
    hand_gain = float(rng.uniform(0.010, 0.016))

    if family == "smoking":
        n_motions = int(rng.integers(5, 7))
        base_interval = float(rng.uniform(14.0, 22.0))
        starts = _motion_schedule(rng, n_motions, 12.0, base_interval, 1.8)
        motions = [_hand_motion(rng, t) for t in starts]
        smoking = [
            _smoking_breath(rng, m.t_end + float(rng.uniform(2.0, 2.8))) for m in motions
        ]
        duration = duration or max(90.0, smoking[-1].t_end + 12.0)
        plan = _fill_breaths(rng, duration, smoking)
        reflectors += [
            ReflectorSpec(
                kind="chest", base_distance=geo["chest"], reflectivity=chest_gain,
                breaths=plan, multipath=_chest_multipath(rng, geo),
            ),
            ReflectorSpec(
                kind="hand", rest_distance=geo["rest"], mouth_distance=geo["mouth"],
                reflectivity=hand_gain, motions=motions,
            ),
        ]
    elif family in ("eating", "drinking"):
        n_motions = int(rng.integers(4, 7))
        base_interval = float(rng.uniform(14.0, 22.0))
        starts = _motion_schedule(rng, n_motions, 10.0, base_interval, 2.0)
        if family == "eating":
            motions = []
            for t in starts:
                for _ in range(int(rng.integers(1, 4))):
                    m = MotionSpec(t, float(rng.uniform(0.5, 0.9)),
                                   float(rng.uniform(0.2, 0.6)), float(rng.uniform(0.5, 0.9)))
                    motions.append(m)
                    t = m.t_end + float(rng.uniform(0.3, 0.8))
        else:
            motions = [_drink_motion(rng, t) for t in starts]
        sighs = [
            _sigh_breath(rng, m.t_end + float(rng.uniform(2.0, 3.0)))
            for m in motions
            if rng.uniform() < 0.5
        ]
        duration = duration or max(90.0, motions[-1].t_end + 14.0)
        plan = _fill_breaths(rng, duration, sighs, deep_prob=0.08)
        reflectors += [
            ReflectorSpec(kind="chest", base_distance=geo["chest"], reflectivity=chest_gain,
                          breaths=plan, multipath=_chest_multipath(rng, geo)),
            ReflectorSpec(kind="confuser", template="eat" if family == "eating" else "drink",
                          rest_distance=geo["rest"], mouth_distance=geo["mouth"],
                          reflectivity=hand_gain, motions=motions),
        ]
    elif family == "deep_breathing":
        n_sighs = int(rng.integers(3, 6))
        base_interval = float(rng.uniform(18.0, 26.0))
        sigh_times = _motion_schedule(rng, n_sighs, 8.0, base_interval, 6.0)
        sighs = [_sigh_breath(rng, t) for t in sigh_times]
        duration = duration or max(90.0, sigh_times[-1] + 16.0)
        plan = _fill_breaths(rng, duration, sighs, deep_prob=0.25)
        reflectors.append(
            ReflectorSpec(kind="chest", base_distance=geo["chest"], reflectivity=chest_gain,
                          breaths=plan, multipath=_chest_multipath(rng, geo))
        )
    elif family == "steering":
        duration = duration or 100.0
        plan = _fill_breaths(rng, duration, [], deep_prob=0.05)
        reflectors += [
            ReflectorSpec(kind="chest", base_distance=geo["chest"], reflectivity=chest_gain,
                          breaths=plan, multipath=_chest_multipath(rng, geo)),
            ReflectorSpec(kind="confuser", template="steering",
                          base_distance=float(rng.uniform(0.30, 0.36)),
                          wander_amplitude=float(rng.uniform(0.02, 0.04)),
                          wander_period=float(rng.uniform(8.0, 14.0)),
                          reflectivity=hand_gain),
        ]
    elif family == "copilot":
        duration = duration or 110.0
        plan = _fill_breaths(rng, duration, [], deep_prob=0.1)
        co_sighs = [_sigh_breath(rng, t) for t in
                    _motion_schedule(rng, int(rng.integers(2, 5)), 10.0, 24.0, 8.0)]
        co_plan = _fill_breaths(rng, duration, co_sighs, deep_prob=0.2)
        reflectors += [
            ReflectorSpec(kind="chest", base_distance=geo["chest"], reflectivity=chest_gain,
                          breaths=plan, multipath=_chest_multipath(rng, geo)),
            ReflectorSpec(kind="chest", label="copilot",
                          base_distance=float(rng.uniform(0.82, 0.95)),
                          reflectivity=chest_gain * float(rng.uniform(0.6, 0.9)),
                          breaths=co_plan),
        ]

    return SceneSpec(
        duration=float(duration),
        start_offset=start_offset,
        los_gain=float(rng.uniform(0.2, 0.35)),
        noise_snr=float(rng.uniform(13.0, 18.0)),
        rng_seed=int(rng.integers(0, 2**31 - 1)),
        reflectors=reflectors,
    )


# ---------------------------------------------------------------------------
# Training segments: rasterized trajectories with jitter, no audio rendering
# ---------------------------------------------------------------------------

def _jittered_track(
    rng: np.random.Generator,
    track_id: int,
    t: np.ndarray,
    d: np.ndarray,
    jitter: float = 0.0012,
    dropout: float = 0.35,
):
    """Simulate tracker output: measurement jitter plus occasional gaps."""
    from smokesonar.tracking import TrackedSequence

    keep = np.ones(t.size, dtype=bool)
    if rng.uniform() < dropout and t.size > 30:
        n_gaps = int(rng.integers(1, 4))
        for _ in range(n_gaps):
            g0 = int(rng.integers(0, t.size - 12))
            keep[g0 : g0 + int(rng.integers(3, 11))] = False
    dd = d + rng.normal(0.0, jitter, d.size)
    return TrackedSequence(
        id=track_id, times=t[keep], distances=dd[keep], rccs=np.full(int(keep.sum()), 0.8)
    )


def _segment_motion(rng: np.random.Generator, style: str) -> list[MotionSpec]:
    if style == "smoke":
        return [
            MotionSpec(0.0, float(rng.uniform(0.7, 1.1)), float(rng.uniform(0.6, 1.4)),
                       float(rng.uniform(0.7, 1.1)))
        ]
    if style == "drink":
        return [
            MotionSpec(0.0, float(rng.uniform(0.7, 1.2)), float(rng.uniform(0.8, 3.2)),
                       float(rng.uniform(0.7, 1.2)))
        ]
    # eat: a burst of quick dips
    out = []
    t = 0.0
    for _ in range(int(rng.integers(1, 4))):
        m = MotionSpec(t, float(rng.uniform(0.4, 0.7)), float(rng.uniform(0.1, 0.4)),
                       float(rng.uniform(0.4, 0.7)))
        out.append(m)
        t = m.t_end + float(rng.uniform(0.3, 0.8))
    return out


def make_training_segments(
    n: int,
    seed: int = 0,
    window_s: float = 5.0,
    grid_size: int = 96,
    frame_period: float = 464.0 / 48000.0,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Labeled rasters for classifier training, half positive.

    Positives hold one complete smoking-style hand motion (with margin)
    plus realistic clutter; negatives are rest lines, steering wander,
    eat/drink gestures, boundary-straddling partial motions, and empty or
    clutter-only windows.  Tracker artifacts (jitter, dropouts) are applied
    to every line.  Deterministic per seed.
    """
    from smokesonar.features import rasterize

    rng = np.random.default_rng(seed)
    t = np.arange(int(window_s / frame_period)) * frame_period
    grids = np.zeros((n, grid_size, grid_size), dtype=np.uint8)
    labels = np.zeros(n, dtype=np.int64)
    kinds: list[str] = []
    neg_styles = ("rest", "steer", "eat", "drink", "partial", "empty", "wobble")
    for i in range(n):
        positive = i % 2 == 0
        geo = _geometry(rng)
        tracks = []
        tid = 0
        if positive:
            kind = "smoke"
            motions = _segment_motion(rng, "smoke")
            span = motions[-1].t_end
            shift = float(rng.uniform(0.2, max(0.25, window_s - span - 0.2)))
            motions = [MotionSpec(m.t_start + shift, m.up_s, m.hold_s, m.down_s) for m in motions]
            d = hand_distance(t, geo["rest"], geo["mouth"], motions)
            tracks.append(_jittered_track(rng, tid, t, d))
            tid += 1
        else:
            kind = neg_styles[int(rng.integers(0, len(neg_styles)))]
            if kind == "rest":
                d = np.full(t.size, geo["rest"])
                tracks.append(_jittered_track(rng, tid, t, d))
                tid += 1
            elif kind == "steer":
                d = steering_distance(
                    t, float(rng.uniform(0.30, 0.40)), float(rng.uniform(0.02, 0.05)),
                    float(rng.uniform(6.0, 14.0)), float(rng.uniform(0, 6.0))
                )
                tracks.append(_jittered_track(rng, tid, t, d))
                tid += 1
            elif kind in ("eat", "drink"):
                motions = _segment_motion(rng, kind)
                span = motions[-1].t_end
                shift = float(rng.uniform(0.2, max(0.25, window_s - span - 0.2)))
                motions = [MotionSpec(m.t_start + shift, m.up_s, m.hold_s, m.down_s) for m in motions]
                d = hand_distance(t, geo["rest"], geo["mouth"], motions)
                tracks.append(_jittered_track(rng, tid, t, d))
                tid += 1
            elif kind == "partial":
                motions = _segment_motion(rng, "smoke")
                span = motions[-1].t_end
                # put the motion center well outside: at most ~60% visible
                if rng.uniform() < 0.5:
                    shift = -float(rng.uniform(0.4, 0.8)) * span
                else:
                    shift = window_s - float(rng.uniform(0.2, 0.6)) * span
                motions = [MotionSpec(m.t_start + shift, m.up_s, m.hold_s, m.down_s) for m in motions]
                d = hand_distance(t, geo["rest"], geo["mouth"], motions)
                tracks.append(_jittered_track(rng, tid, t, d))
                tid += 1
            elif kind == "wobble":
                base = float(rng.uniform(0.3, 0.95))
                d = base + float(rng.uniform(0.002, 0.006)) * np.sin(
                    2 * np.pi * t / float(rng.uniform(2.0, 9.0)) + float(rng.uniform(0, 6))
                )
                tracks.append(_jittered_track(rng, tid, t, d))
                tid += 1
        # clutter lines either way
        for _ in range(int(rng.integers(0, 3))):
            base = float(rng.uniform(0.15, 0.98))
            d = base + rng.normal(0.0, float(rng.uniform(0.0005, 0.002)), t.size)
            tracks.append(_jittered_track(rng, tid, t, d, dropout=0.6))
            tid += 1
        fm = rasterize(tracks, 0.0, window_s, grid_size, 1.0)
        grids[i] = fm.grid
        labels[i] = 1 if positive else 0
        kinds.append(kind)
    return grids, labels, kinds


def make_rendered_training_set(
    n_scenes: int,
    seed: int = 0,
    pipeline_cfg=None,
    scene_duration: float = 24.0,
    max_neg_per_scene: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Training rasters taken from the real pipeline on rendered mini-scenes.

    Each mini-scene holds the usual chest + multipath + clutter plus one of:
    a smoking hand motion, an eat/drink gesture, steering wander, or nothing.
    The scene is rendered, tracked, breath-like tracks are removed, and the
    5 s windows are rasterized exactly as at detection time.  Window labels
    come from ground truth: positive when a smoking motion lies (almost)
    fully inside, negative when no motion covers more than 60% - windows in
    between are ambiguous and skipped.  Deterministic per seed.
    """
    from smokesonar.config import PipelineConfig
    from smokesonar.features import rasterize, segment_starts
    from smokesonar.pipeline import track_buffer
    from smokesonar.respiration import qualifying_breath_paths
    from smokesonar.tracking import window_profile

    cfg = pipeline_cfg or PipelineConfig()
    rng = np.random.default_rng(seed)
    styles = ("smoke", "smoke", "smoke", "smoke", "drink", "drink", "eat", "eat", "steer", "none")
    grids: list[np.ndarray] = []
    labels: list[int] = []
    for i in range(n_scenes):
        style = styles[int(rng.integers(0, len(styles)))]
        scene_seed = int(rng.integers(0, 2**31 - 1))
        srng = np.random.default_rng(scene_seed)
        geo = _geometry(srng)
        chest_gain = float(srng.uniform(0.008, 0.012))
        hand_gain = float(srng.uniform(0.010, 0.016))
        plan = _fill_breaths(srng, scene_duration, [], deep_prob=0.1)
        reflectors = [
            ReflectorSpec(kind="static", base_distance=float(srng.uniform(1.04, 1.25)),
                          reflectivity=float(srng.uniform(0.006, 0.012))),
            ReflectorSpec(kind="chest", base_distance=geo["chest"], reflectivity=chest_gain,
                          breaths=plan, multipath=_chest_multipath(srng, geo)),
        ]
        t0_motion = float(srng.uniform(6.0, scene_duration - 16.0))
        if style == "smoke":
            motions = [_hand_motion(srng, t0_motion)]
            motions.append(_hand_motion(srng, motions[0].t_end + float(srng.uniform(3.0, 5.0))))
            reflectors.append(
                ReflectorSpec(kind="hand", rest_distance=geo["rest"], mouth_distance=geo["mouth"],
                              reflectivity=hand_gain, motions=motions)
            )
        elif style in ("drink", "eat"):
            if style == "drink":
                motions = [_drink_motion(srng, t0_motion)]
            else:
                motions = []
                t = t0_motion
                for _ in range(int(srng.integers(1, 4))):
                    m = MotionSpec(t, float(srng.uniform(0.4, 0.7)), float(srng.uniform(0.1, 0.4)),
                                   float(srng.uniform(0.4, 0.7)))
                    motions.append(m)
                    t = m.t_end + float(srng.uniform(0.3, 0.8))
            reflectors.append(
                ReflectorSpec(kind="confuser", template=style,
                              rest_distance=geo["rest"], mouth_distance=geo["mouth"],
                              reflectivity=hand_gain, motions=motions)
            )
        elif style == "steer":
            reflectors.append(
                ReflectorSpec(kind="confuser", template="steering",
                              base_distance=float(srng.uniform(0.30, 0.36)),
                              wander_amplitude=float(srng.uniform(0.02, 0.04)),
                              wander_period=float(srng.uniform(8.0, 14.0)),
                              reflectivity=hand_gain)
            )
        spec = SceneSpec(
            duration=scene_duration,
            start_offset=int(srng.integers(0, 600)),
            los_gain=float(srng.uniform(0.2, 0.35)),
            noise_snr=float(srng.uniform(13.0, 18.0)),
            rng_seed=scene_seed,
            reflectors=reflectors,
        )
        received, truth = render_scene(spec, cfg.chirp, cfg.speed_of_sound)
        _, _, sequences = track_buffer(received, cfg)
        if not sequences:
            continue
        t_end = max(s.times[-1] for s in sequences)
        profile = window_profile(sequences, 0.0, t_end)
        breath_ids = {
            c.sequence.id
            for c in qualifying_breath_paths(
                profile,
                amplitude_cap=cfg.respiration.amplitude_cap,
                band=(cfg.respiration.band_low, cfg.respiration.band_high),
                dominance_ratio=cfg.respiration.dominance_ratio,
                frame_period=cfg.chirp.frame_period,
            )
        }
        motion_seqs = [s for s in sequences if s.id not in breath_ids]
        scene_grids = []
        scene_labels = []
        for w0 in segment_starts(0.0, t_end, cfg.segmentation.window_s, cfg.segmentation.hop_s):
            w1 = w0 + cfg.segmentation.window_s
            # a window is positive when it holds (most of) a smoking motion,
            # negative when no motion meaningfully overlaps, skipped between
            best_smoke = 0.0
            for a, b in truth.hand_intervals:
                span = b - a
                if span > 0:
                    best_smoke = max(best_smoke, max(0.0, min(b, w1) - max(a, w0)) / span)
            if best_smoke >= 0.8:
                label = 1
            elif best_smoke < 0.5:
                label = 0
            else:
                continue
            fm = rasterize(motion_seqs, float(w0), cfg.segmentation.window_s,
                           cfg.segmentation.grid_size, cfg.tracking.max_distance)
            scene_grids.append(fm.grid)
            scene_labels.append(label)
        neg_idx = [j for j, lab in enumerate(scene_labels) if lab == 0]
        pos_idx = [j for j, lab in enumerate(scene_labels) if lab == 1]
        if len(neg_idx) > max_neg_per_scene:
            pick = rng.permutation(len(neg_idx))[:max_neg_per_scene]
            neg_idx = [neg_idx[int(p)] for p in sorted(pick)]
        for j in pos_idx + neg_idx:
            grids.append(scene_grids[j])
            labels.append(scene_labels[j])
    x = np.asarray(grids, dtype=np.uint8)
    y = np.asarray(labels, dtype=np.int64)
    # replicate the minority class so training sees a balanced stream
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if 0 < n_pos < n_neg:
        reps = int(round(n_neg / n_pos)) - 1
        if reps > 0:
            extra = np.flatnonzero(y == 1)
            x = np.concatenate([x] + [x[extra]] * reps)
            y = np.concatenate([y] + [y[extra]] * reps)
    return x, y


def save_training_segments(path, grids: np.ndarray, labels: np.ndarray) -> None:
    np.savez_compressed(path, segments=grids, labels=labels)


def load_training_segments(path) -> tuple[np.ndarray, np.ndarray]:
    with np.load(path) as data:
        if "segments" not in data or "labels" not in data:
            raise DataError(f"{path}: expected arrays 'segments' and 'labels'")
        return data["segments"], data["labels"]


# ---------------------------------------------------------------------------
# Corpus generation and serialization
# ---------------------------------------------------------------------------

@dataclass
class CorpusRecipe:
    seed: int = 0
    families: list[tuple[str, int]] = field(default_factory=lambda: [("smoking", 2), ("drinking", 2)])

    @classmethod
    def from_json(cls, path) -> "CorpusRecipe":
        with open(path) as fh:
            raw = json.load(fh)
        fams = [(str(name), int(count)) for name, count in raw.get("families", [])]
        return cls(seed=int(raw.get("seed", 0)), families=fams)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"version": SCENE_SCHEMA_VERSION, "seed": self.seed,
                       "families": [list(f) for f in self.families]}, fh, indent=2)
            fh.write("\n")


def _scene_seed(base_seed: int, family: str, index: int) -> int:
    ss = np.random.SeedSequence([base_seed, FAMILIES.index(family), index])
    return int(ss.generate_state(1)[0])


def iter_corpus(recipe: CorpusRecipe):
    """Yield (scene_id, family, SceneSpec) deterministically per recipe."""
    counter = 0
    for family, count in recipe.families:
        for i in range(count):
            spec = make_scene(family, _scene_seed(recipe.seed, family, i))
            yield f"scene_{counter:04d}_{family}", family, spec
            counter += 1


def generate_corpus(recipe: CorpusRecipe, out_dir, cfg: ChirpConfig | None = None) -> list[str]:
    """Render every scene in the recipe to out_dir: WAV + spec + ground truth.

    Returns the list of scene ids written.  Byte-identical across runs for a
    fixed recipe.
    """
    cfg = cfg or ChirpConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for scene_id, family, spec in iter_corpus(recipe):
        received, truth = render_scene(spec, cfg, include_tracks=False)
        write_wav(out / f"{scene_id}.wav", received)
        save_scene_spec(out / f"{scene_id}.spec.json", spec)
        save_ground_truth(out / f"{scene_id}.truth.json", truth)
        ids.append(scene_id)
    manifest = {
        "version": SCENE_SCHEMA_VERSION,
        "seed": recipe.seed,
        "families": [list(f) for f in recipe.families],
        "scenes": ids,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return ids


def save_scene_spec(path, spec: SceneSpec) -> None:
    raw = dataclasses.asdict(spec)
    raw["version"] = SCENE_SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(raw, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scene_spec(path) -> SceneSpec:
    with open(path) as fh:
        raw = json.load(fh)
    version = raw.pop("version", SCENE_SCHEMA_VERSION)
    if version != SCENE_SCHEMA_VERSION:
        raise DataError(f"unsupported scene spec version {version}")
    reflectors = []
    for r in raw.pop("reflectors", []):
        r["breaths"] = [BreathSpec(**b) for b in r.get("breaths", [])]
        r["motions"] = [MotionSpec(**m) for m in r.get("motions", [])]
        r["multipath"] = [tuple(m) for m in r.get("multipath", [])]
        reflectors.append(ReflectorSpec(**r))
    return SceneSpec(reflectors=reflectors, **raw)


def save_ground_truth(path, truth: GroundTruth) -> None:
    raw = {
        "version": SCENE_SCHEMA_VERSION,
        "duration": truth.duration,
        "frame_period": truth.frame_period,
        "hand_intervals": [list(x) for x in truth.hand_intervals],
        "other_motion_intervals": [list(x) for x in truth.other_motion_intervals],
        "breath_events": [[t, d, k] for t, d, k in truth.breath_events],
        "smoking_motion_times": truth.smoking_motion_times,
        "smoking_event_spans": [list(x) for x in truth.smoking_event_spans],
    }
    with open(path, "w") as fh:
        json.dump(raw, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ground_truth(path) -> GroundTruth:
    with open(path) as fh:
        raw = json.load(fh)
    if raw.get("version") != SCENE_SCHEMA_VERSION:
        raise DataError(f"unsupported ground truth version {raw.get('version')}")
    return GroundTruth(
        duration=raw["duration"],
        frame_period=raw["frame_period"],
        hand_intervals=[tuple(x) for x in raw["hand_intervals"]],
        other_motion_intervals=[tuple(x) for x in raw["other_motion_intervals"]],
        breath_events=[(t, d, k) for t, d, k in raw["breath_events"]],
        smoking_motion_times=list(raw["smoking_motion_times"]),
        smoking_event_spans=[tuple(x) for x in raw["smoking_event_spans"]],
    )
