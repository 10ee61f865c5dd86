"""Associate ranging peaks across frames into per-obstacle distance tracks.

Peaks in adjacent frames that are mutual nearest neighbours (and closer than
the association gate) continue the same track; unmatched peaks open new
tracks and tracks that miss too many frames in a row are closed.  Closed
tracks are pruned: shorter than 3 s (door slams, pothole jolts) or with
movement range under the static threshold (seats, dashboard) never reach
motion analysis.  Obstacles at 1 m or beyond are ignored outright - the
driver sits closer than that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from smokesonar.errors import OrderingError
from smokesonar.ranging import Peak, RccProfile


@dataclass
class TrackedSequence:
    id: int
    times: np.ndarray
    distances: np.ndarray
    rccs: np.ndarray
    status: str = "closed"  # "active" while still being extended

    @property
    def duration(self) -> float:
        if self.times.size == 0:
            return 0.0
        return float(self.times[-1] - self.times[0])

    @property
    def movement_range(self) -> float:
        if self.distances.size == 0:
            return 0.0
        return float(self.distances.max() - self.distances.min())

    @property
    def mean_distance(self) -> float:
        return float(self.distances.mean()) if self.distances.size else 0.0


@dataclass
class SequenceProfile:
    """Tracks restricted to a time window, sorted by id."""

    t_start: float
    t_end: float
    sequences: list[TrackedSequence]


def associate_peaks(
    prev: list[float], cur: list[float], gate: float = 0.02
) -> list[tuple[int, int]]:
    """Greedy mutual-nearest-neighbour matching between two distance lists.

    Returns index pairs (i_prev, j_cur).  A pair matches only if each is the
    other's nearest neighbour and they differ by at most ``gate`` meters.
    """
    if not prev or not cur:
        return []
    p = np.asarray(prev)
    c = np.asarray(cur)
    diff = np.abs(p[:, None] - c[None, :])
    nearest_c = diff.argmin(axis=1)
    nearest_p = diff.argmin(axis=0)
    pairs = []
    for i, j in enumerate(nearest_c):
        if nearest_p[j] == i and diff[i, j] <= gate:
            pairs.append((i, int(j)))
    return pairs


class _Track:
    __slots__ = ("id", "times", "distances", "rccs", "misses")

    def __init__(self, track_id: int):
        self.id = track_id
        self.times: list[float] = []
        self.distances: list[float] = []
        self.rccs: list[float] = []
        self.misses = 0

    def add(self, t: float, d: float, r: float):
        self.times.append(t)
        self.distances.append(d)
        self.rccs.append(r)
        self.misses = 0

    def velocity(self, span: int = 4) -> float:
        if len(self.times) < 3:
            return 0.0
        k = min(span, len(self.times))
        dt = self.times[-1] - self.times[-k]
        if dt <= 0:
            return 0.0
        return (self.distances[-1] - self.distances[-k]) / dt

    def predicted(self, t: float, coast_cap: float = 0.35) -> float:
        """Constant-velocity extrapolation, capped at ``coast_cap`` seconds.

        Keeps a moving target matchable while its peak is occluded by a
        stronger neighbour for a few frames; the cap stops starved tracks
        from sweeping across the range and stealing other tracks' peaks.
        The short velocity memory keeps the prediction from overshooting
        when a hand decelerates into a hold.
        """
        if not self.times:
            return 0.0
        dt = min(t - self.times[-1], coast_cap)
        return self.distances[-1] + self.velocity() * dt

    def to_sequence(self, status: str = "closed") -> TrackedSequence:
        return TrackedSequence(
            id=self.id,
            times=np.asarray(self.times),
            distances=np.asarray(self.distances),
            rccs=np.asarray(self.rccs),
            status=status,
        )


class SequenceTracker:
    """Stateful nearest-neighbour tracker; feed frames in order.

    ``unwrap_step``: distances from phase-refined envelope peaks are exact
    modulo half the carrier wavelength (the envelope argmax picks the branch,
    noisily).  Given the step (v / (2 * f_c), about 8.2 mm), each matched
    sample is snapped to the branch nearest the track's previous sample,
    which removes branch-jump jitter entirely; true inter-frame motion stays
    far below half a step at this frame rate.
    """

    def __init__(
        self,
        gate: float = 0.02,
        max_gap: int = 6,
        min_duration: float = 3.0,
        static_threshold: float = 0.003,
        max_distance: float = 1.0,
        unwrap_step: float | None = None,
        min_fill: float = 0.0,
        frame_period: float = 464.0 / 48000.0,
        prune: bool = True,
    ):
        self.gate = gate
        self.max_gap = max_gap
        self.min_duration = min_duration
        self.static_threshold = static_threshold
        self.max_distance = max_distance
        self.unwrap_step = unwrap_step
        self.min_fill = min_fill
        self.frame_period = frame_period
        self.prune = prune
        self._tracks: list[_Track] = []
        self._next_id = 0
        self._last_frame: int | None = None
        self.dropped_short = 0
        self.dropped_static = 0
        self.dropped_sparse = 0

    def survives(self, seq: TrackedSequence) -> bool:
        """Pruning rule: too short, static, or too sparse never reaches
        motion analysis."""
        if seq.times.size == 0:
            return False
        if seq.duration < self.min_duration:
            self.dropped_short += 1
            return False
        if seq.movement_range < self.static_threshold:
            self.dropped_static += 1
            return False
        if self.min_fill > 0.0 and seq.duration > 0:
            # noise-seeded tracks survive long gaps by catching stray peaks;
            # real obstacles reflect nearly every frame
            fill = seq.times.size * self.frame_period / (seq.duration + self.frame_period)
            if fill < self.min_fill:
                self.dropped_sparse += 1
                return False
        return True

    def update(self, frame_index: int, timestamp: float, peaks: list[Peak]) -> list[TrackedSequence]:
        """Advance one frame; returns surviving tracks closed this step.

        With prune=False on the tracker, raw closures are returned instead
        (for stitching before the pruning pass).
        """
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise OrderingError(
                f"frame {frame_index} arrived after frame {self._last_frame}"
            )
        self._last_frame = frame_index
        usable = [p for p in peaks if p.distance < self.max_distance]
        prev_d = [t.predicted(timestamp) for t in self._tracks]
        cur_d = [p.distance for p in usable]
        pairs = associate_peaks(prev_d, cur_d, self.gate)
        matched_tracks = {i for i, _ in pairs}
        matched_peaks = {j for _, j in pairs}
        for i, j in pairs:
            d = usable[j].distance
            if self.unwrap_step:
                d -= self.unwrap_step * round((d - prev_d[i]) / self.unwrap_step)
            self._tracks[i].add(timestamp, d, usable[j].rcc)
        closed: list[TrackedSequence] = []
        still_active: list[_Track] = []
        for i, track in enumerate(self._tracks):
            if i in matched_tracks:
                still_active.append(track)
                continue
            track.misses += 1
            if track.misses > self.max_gap:
                seq = track.to_sequence()
                if not self.prune or self.survives(seq):
                    closed.append(seq)
            else:
                still_active.append(track)
        self._tracks = still_active
        for j, peak in enumerate(usable):
            if j not in matched_peaks:
                track = _Track(self._next_id)
                self._next_id += 1
                track.add(timestamp, peak.distance, peak.rcc)
                self._tracks.append(track)
        return closed

    def finish(self) -> list[TrackedSequence]:
        """Close out everything still active, pruned the same way."""
        closed = []
        for t in self._tracks:
            seq = t.to_sequence()
            if not self.prune or self.survives(seq):
                closed.append(seq)
        self._tracks = []
        return closed


def stitch_sequences(
    sequences: list[TrackedSequence],
    max_gap_s: float = 0.6,
    max_jump: float = 0.04,
) -> list[TrackedSequence]:
    """Merge track fragments that plainly continue one another.

    A fragment B continues A when it starts within ``max_gap_s`` after A
    ends and within ``max_jump`` meters of A's velocity-extrapolated end
    position.  Occlusion by a stronger neighbour routinely splits one
    moving obstacle into such fragments; stitching reunites them so the
    duration-based pruning judges the whole trajectory, not the pieces.
    """
    if not sequences:
        return []
    parts = sorted(sequences, key=lambda s: (s.times[0], s.id))
    used = [False] * len(parts)
    merged: list[TrackedSequence] = []
    for i, seq in enumerate(parts):
        if used[i]:
            continue
        used[i] = True
        chain = [seq]
        cur = seq
        while True:
            k = min(6, cur.times.size)
            dt = cur.times[-1] - cur.times[-k]
            vel = (cur.distances[-1] - cur.distances[-k]) / dt if dt > 0 else 0.0
            best = None
            best_err = max_jump
            for j, cand in enumerate(parts):
                if used[j]:
                    continue
                gap = cand.times[0] - cur.times[-1]
                if gap <= 0 or gap > max_gap_s:
                    continue
                err = abs(cand.distances[0] - (cur.distances[-1] + vel * gap))
                if err <= best_err:
                    best = j
                    best_err = err
            if best is None:
                break
            used[best] = True
            chain.append(parts[best])
            cur = parts[best]
        if len(chain) == 1:
            merged.append(seq)
        else:
            merged.append(
                TrackedSequence(
                    id=chain[0].id,
                    times=np.concatenate([c.times for c in chain]),
                    distances=np.concatenate([c.distances for c in chain]),
                    rccs=np.concatenate([c.rccs for c in chain]),
                    status="closed",
                )
            )
    merged.sort(key=lambda s: s.id)
    return merged


def build_sequences(
    profiles: list[RccProfile],
    gate: float = 0.02,
    max_gap: int = 6,
    min_duration: float = 3.0,
    static_threshold: float = 0.003,
    max_distance: float = 1.0,
    unwrap_step: float | None = None,
    min_fill: float = 0.0,
    stitch: bool = False,
    frame_period: float = 464.0 / 48000.0,
) -> list[TrackedSequence]:
    """Run the tracker over ordered profiles; returns surviving sequences
    sorted by id.  With stitch=True, fragments of one obstacle are rejoined
    before pruning."""
    tracker = SequenceTracker(
        gate=gate,
        max_gap=max_gap,
        min_duration=min_duration,
        static_threshold=static_threshold,
        max_distance=max_distance,
        unwrap_step=unwrap_step,
        min_fill=min_fill,
        frame_period=frame_period,
        prune=not stitch,
    )
    out: list[TrackedSequence] = []
    for p in profiles:
        out.extend(tracker.update(p.frame_index, p.timestamp, p.peaks))
    out.extend(tracker.finish())
    if stitch:
        out = [s for s in stitch_sequences(out) if tracker.survives(s)]
    out.sort(key=lambda s: s.id)
    return out


def window_profile(
    sequences: list[TrackedSequence], t_start: float, t_end: float
) -> SequenceProfile:
    """Restrict sequences to [t_start, t_end); drops empty restrictions."""
    windowed = []
    for seq in sequences:
        sel = (seq.times >= t_start) & (seq.times < t_end)
        if not sel.any():
            continue
        windowed.append(
            TrackedSequence(
                id=seq.id,
                times=seq.times[sel],
                distances=seq.distances[sel],
                rccs=seq.rccs[sel],
                status=seq.status,
            )
        )
    windowed.sort(key=lambda s: s.id)
    return SequenceProfile(t_start=t_start, t_end=t_end, sequences=windowed)


def export_sequences(path, sequences: list[TrackedSequence]) -> None:
    """One record per sample: id, timestamp, distance, rcc."""
    with open(path, "w") as fh:
        fh.write("# sequence_id timestamp_s distance_m rcc\n")
        for seq in sorted(sequences, key=lambda s: s.id):
            for t, d, r in zip(seq.times, seq.distances, seq.rccs):
                fh.write(f"{seq.id} {t:.6f} {d:.6f} {r:.6f}\n")


def import_sequences(path) -> list[TrackedSequence]:
    rows: dict[int, list[tuple[float, float, float]]] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            sid, t, d, r = line.split()
            rows.setdefault(int(sid), []).append((float(t), float(d), float(r)))
    out = []
    for sid in sorted(rows):
        arr = np.asarray(rows[sid])
        out.append(
            TrackedSequence(id=sid, times=arr[:, 0], distances=arr[:, 1], rccs=arr[:, 2])
        )
    return out
