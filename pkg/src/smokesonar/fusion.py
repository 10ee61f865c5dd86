"""Composite and periodicity analysis, plus the evaluation metrics.

A detected hand movement only becomes a smoking motion if a smoking-class
breath follows it inside the composite window (confusers like eating and
drinking move the hand the same way but don't drag on a cigarette).  A
smoking event is then declared only after lambda (default 3) motions whose
consecutive intervals are similar - smoking is rhythmic, one puff every
few tens of seconds - otherwise the oldest buffered motion is discarded as
invalid and the buffer slides.

Detector variants used by the ablation study select which signals gate a
motion and whether periodicity applies:
  Hp3  - hand movements alone, periodicity on;
  Bp3  - smoking breaths alone, periodicity on;
  HBp  - composite motions, no periodicity (every motion is an event);
  HBp3 - the full detector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from smokesonar.errors import ConfigError
from smokesonar.features import HandEvent
from smokesonar.respiration import BreathEvent

MODES = ("Hp3", "Bp3", "HBp", "HBp3")


@dataclass
class SmokingMotion:
    motion_time: float  # hand-movement start
    hand_event: HandEvent | None = None
    breath: BreathEvent | None = None


@dataclass
class SmokingEventDecision:
    motions: list[SmokingMotion]
    intervals: list[float]
    verdict: str  # "event" | "rejected"
    reject_reason: str = ""

    @property
    def t_start(self) -> float:
        return self.motions[0].motion_time

    @property
    def t_end(self) -> float:
        return self.motions[-1].motion_time


@dataclass
class EvalReport:
    actual: int  # A
    detected: int  # D
    correct: int  # C

    @property
    def accuracy(self) -> float:
        return self.correct / self.actual if self.actual else 0.0

    @property
    def false_alarm_rate(self) -> float:
        return 1.0 - self.correct / self.detected if self.detected else 0.0


def composite_check(
    hand_event: HandEvent,
    breath_events: list[BreathEvent],
    window_s: float = 8.0,
) -> SmokingMotion | None:
    """A smoking motion iff a smoking-class breath troughs within
    ``window_s`` after the hand event ends; breaths alone never trigger."""
    t1 = hand_event.t_end
    for ev in breath_events:
        if ev.kind == "smoking" and t1 < ev.trough_time <= t1 + window_s:
            return SmokingMotion(motion_time=hand_event.t_start, hand_event=hand_event, breath=ev)
    return None


def periodicity_check(
    motions: list[SmokingMotion],
    lam: int = 3,
    tolerance: float = 0.25,
    interval_band: tuple[float, float] = (10.0, 120.0),
) -> list[SmokingEventDecision]:
    """Slide over time-ordered motions; emit a decision per evaluated window.

    With ``lam`` motions buffered, all consecutive intervals must pairwise
    agree within ``tolerance`` (relative) and lie inside the plausibility
    band.  On success the buffer is cleared (those motions are consumed);
    on rejection the oldest motion is dropped and the window slides.
    lam = 1 accepts every motion (no periodicity requirement).
    """
    if lam < 1:
        raise ConfigError(f"lambda must be >= 1, got {lam}")
    decisions: list[SmokingEventDecision] = []
    buffer: list[SmokingMotion] = []
    for motion in sorted(motions, key=lambda m: m.motion_time):
        buffer.append(motion)
        while len(buffer) >= lam:
            window = buffer[:lam]
            intervals = [
                window[i + 1].motion_time - window[i].motion_time for i in range(lam - 1)
            ]
            reason = ""
            for gap in intervals:
                if not (interval_band[0] <= gap <= interval_band[1]):
                    reason = f"interval {gap:.1f} s outside {interval_band}"
                    break
            if not reason:
                for a, b in zip(intervals, intervals[1:]):
                    if abs(a - b) / max(a, b) > tolerance:
                        reason = f"intervals {a:.1f} s vs {b:.1f} s differ beyond {tolerance}"
                        break
            if reason:
                decisions.append(
                    SmokingEventDecision(window, intervals, "rejected", reason)
                )
                buffer.pop(0)
            else:
                decisions.append(SmokingEventDecision(window, intervals, "event"))
                buffer = buffer[lam:]
    return decisions


@dataclass
class SmokingEvent:
    t_start: float
    t_end: float
    motion_times: list[float] = field(default_factory=list)


def merge_event_decisions(
    decisions: list[SmokingEventDecision], merge_gap_s: float = 120.0
) -> list[SmokingEvent]:
    """Collapse consecutive accepted decisions into episodes.

    One cigarette produces several accepted triples in a row; decisions
    whose motions follow within ``merge_gap_s`` of the previous episode
    extend it instead of opening a new event.
    """
    events: list[SmokingEvent] = []
    for dec in decisions:
        if dec.verdict != "event":
            continue
        times = [m.motion_time for m in dec.motions]
        if events and times[0] - events[-1].t_end <= merge_gap_s:
            events[-1].t_end = max(events[-1].t_end, times[-1])
            events[-1].motion_times.extend(times)
        else:
            events.append(SmokingEvent(times[0], times[-1], list(times)))
    return events


def disambiguate_copilot(breath_paths: list) -> object:
    """Driver vs co-pilot: the breath path nearer the phone is the driver's.

    Accepts tracked sequences (anything with mean_distance and id); ties
    break toward the smaller sequence id for determinism.
    """
    if not breath_paths:
        raise ConfigError("no qualifying breath paths to disambiguate")
    return min(breath_paths, key=lambda p: (p.mean_distance, p.id))


def evaluate(
    detections: list[float],
    ground_truth: list[float],
    match_window_s: float = 30.0,
) -> EvalReport:
    """Greedy one-to-one matching of detection times to truth times.

    accuracy = C/A, false alarm rate = 1 - C/D (0 when nothing detected).
    """
    det = sorted(detections)
    truth = sorted(ground_truth)
    used = [False] * len(truth)
    correct = 0
    for t_det in det:
        best = -1
        best_gap = match_window_s
        for i, t_true in enumerate(truth):
            if used[i]:
                continue
            gap = abs(t_det - t_true)
            if gap <= best_gap:
                best = i
                best_gap = gap
        if best >= 0:
            used[best] = True
            correct += 1
    return EvalReport(actual=len(truth), detected=len(det), correct=correct)


def export_eval_report(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        fh.write(f"actual_events {report.actual}\n")
        fh.write(f"detected_events {report.detected}\n")
        fh.write(f"correct_detections {report.correct}\n")
        fh.write(f"accuracy {report.accuracy:.6f}\n")
        fh.write(f"false_alarm_rate {report.false_alarm_rate:.6f}\n")
