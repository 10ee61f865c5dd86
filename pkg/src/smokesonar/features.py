"""Sequence-profile segmentation and binary rasterization for the classifier.

The motion tracks in a 5 s window (hop 3 s, i.e. 2 s overlap between
consecutive windows) are drawn into a 96x96 black-and-white grid: row =
distance bin over [0, 1) m, column = time bin over the window, consecutive
samples of one track joined by line rasterization so each track reads as an
unbroken curve.  Windows too short at the stream end are not emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from smokesonar.tracking import TrackedSequence


@dataclass
class FeatureMatrix:
    grid: np.ndarray  # (grid_size, grid_size) uint8, values 0/1
    t_start: float
    seq_ids: list[int] = field(default_factory=list)


@dataclass
class HandEvent:
    t_start: float
    t_end: float
    confidence: float


def segment_starts(
    t_begin: float, t_end: float, window_s: float = 5.0, hop_s: float = 3.0
) -> np.ndarray:
    """Window start times covering [t_begin, t_end); no padding at the end."""
    starts = []
    t = t_begin
    while t + window_s <= t_end + 1e-9:
        starts.append(t)
        t += hop_s
    return np.asarray(starts)


def _draw_line(grid: np.ndarray, r0: int, c0: int, r1: int, c1: int) -> None:
    """Bresenham between two cells, endpoints included."""
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dr - dc
    r, c = r0, c0
    while True:
        grid[r, c] = 1
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dc:
            err -= dc
            r += sr
        if e2 < dr:
            err += dr
            c += sc


def rasterize(
    sequences: list[TrackedSequence],
    t_start: float,
    window_s: float = 5.0,
    grid_size: int = 96,
    max_distance: float = 1.0,
) -> FeatureMatrix:
    """Raster of every sequence's samples inside [t_start, t_start+window_s).

    Insensitive to sequence ordering (cells are just set).  Samples at or
    beyond ``max_distance`` are clipped out; the tracker never emits them,
    this is defensive only.
    """
    grid = np.zeros((grid_size, grid_size), dtype=np.uint8)
    ids = []
    t_end = t_start + window_s
    for seq in sorted(sequences, key=lambda s: s.id):
        sel = (seq.times >= t_start) & (seq.times < t_end) & (seq.distances < max_distance)
        if not sel.any():
            continue
        ids.append(seq.id)
        rows = np.floor(seq.distances[sel] / max_distance * grid_size).astype(int)
        cols = np.floor((seq.times[sel] - t_start) / window_s * grid_size).astype(int)
        rows = np.clip(rows, 0, grid_size - 1)
        cols = np.clip(cols, 0, grid_size - 1)
        for i in range(rows.size - 1):
            _draw_line(grid, rows[i], cols[i], rows[i + 1], cols[i + 1])
        grid[rows[-1], cols[-1]] = 1
    return FeatureMatrix(grid=grid, t_start=t_start, seq_ids=ids)


def segment_and_rasterize(
    sequences: list[TrackedSequence],
    t_begin: float,
    t_end: float,
    window_s: float = 5.0,
    hop_s: float = 3.0,
    grid_size: int = 96,
    max_distance: float = 1.0,
) -> list[FeatureMatrix]:
    return [
        rasterize(sequences, float(t0), window_s, grid_size, max_distance)
        for t0 in segment_starts(t_begin, t_end, window_s, hop_s)
    ]


def classify_segments(
    matrices: list[FeatureMatrix],
    model,
    window_s: float = 5.0,
    threshold: float = 0.5,
) -> list[HandEvent]:
    """Run the classifier over windows and merge positive runs.

    Overlapping (or touching) positive windows become one event spanning
    their union, carrying the maximum confidence seen.
    """
    from smokesonar.cnn import forward

    if not matrices:
        return []
    batch = np.stack([fm.grid for fm in matrices]).astype(np.float64)
    probs, _ = forward(model, batch)
    events: list[HandEvent] = []
    for fm, p_row in zip(matrices, probs):
        p = float(p_row[1])
        if p <= threshold:
            continue
        t0, t1 = fm.t_start, fm.t_start + window_s
        if events and t0 <= events[-1].t_end:
            last = events[-1]
            events[-1] = HandEvent(last.t_start, max(last.t_end, t1), max(last.confidence, p))
        else:
            events.append(HandEvent(t0, t1, p))
    return events
