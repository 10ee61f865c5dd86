"""Command-line entry points.

Subcommands: chirp-export, simulate, train, detect, evaluate, config-dump.
Exit codes: 0 success, 1 usage error, 2 data error, 3 model error.  Every
command is deterministic given its inputs, configuration, and seed; run
summaries carry the configuration hash.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from smokesonar.errors import ConfigError, DataError, ModelError, SonarError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _load_cfg(path: str | None):
    from smokesonar.config import PipelineConfig, load_config

    return load_config(path) if path else PipelineConfig()


def cmd_chirp_export(args) -> int:
    from smokesonar.audio import write_wav
    from smokesonar.frontend import emit_signal

    cfg = _load_cfg(args.config)
    n_frames = args.frames if args.frames else max(1, int(args.seconds * cfg.chirp.sample_rate / cfg.chirp.frame_len))
    buf = emit_signal(cfg.chirp, n_frames)
    write_wav(args.out, buf)
    print(f"wrote {args.out}: {n_frames} frames, {buf.duration:.3f} s at {buf.sample_rate} Hz")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from smokesonar.simulator import CorpusRecipe, generate_corpus

    cfg = _load_cfg(args.config)
    recipe = CorpusRecipe.from_json(args.recipe)
    ids = generate_corpus(recipe, args.out, cfg.chirp)
    print(f"wrote {len(ids)} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from smokesonar.cnn import export_train_curve, save_model, train
    from smokesonar.simulator import load_training_segments

    cfg = _load_cfg(args.config)
    seg_path = Path(args.data) / "segments.npz"
    if not seg_path.exists():
        raise DataError(f"no segments.npz under {args.data}")
    x, y = load_training_segments(seg_path)
    tc = cfg.training
    if args.seed is not None:
        tc.seed = args.seed
    if args.epochs is not None:
        tc.epochs = args.epochs
    model, curve = train(x, y, cfg.cnn, tc)
    save_model(args.out, model)
    if args.curve:
        export_train_curve(args.curve, curve)
    print(
        f"trained on {x.shape[0]} segments, final accuracy {curve[-1].accuracy:.4f}, "
        f"model -> {args.out} (config {cfg.config_hash()})"
    )
    return EXIT_OK


def cmd_detect(args) -> int:
    from smokesonar.audio import read_wav
    from smokesonar.cnn import load_model
    from smokesonar.pipeline import detection_records, run_detection

    cfg = _load_cfg(args.config)
    if args.mode:
        cfg.fusion.mode = args.mode
    received = read_wav(args.wav, expect_rate=cfg.chirp.sample_rate)
    model = load_model(args.model) if args.model else None
    result = run_detection(received, cfg, model)
    text = detection_records(result)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    summary = {
        "mode": result.mode,
        "config_hash": result.config_hash,
        "start_offset": result.offset,
        "sync_evaluations": result.sync_evaluations,
        "sync_fallback": result.sync_fallback,
        "major_path": result.major_path.sequence_id if result.major_path else None,
        "major_path_attempts": result.major_path_attempts,
        "sequences": len(result.sequences),
        "breath_events": len(result.breath_events),
        "hand_events": len(result.hand_events),
        "motions": len(result.motions),
        "events": [[e.t_start, e.t_end] for e in result.events],
    }
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(
        f"{len(result.events)} smoking event(s); offset {result.offset} "
        f"({result.sync_evaluations} sync evaluations); "
        f"major path {summary['major_path'] if summary['major_path'] is not None else 'none'}"
    )
    return EXIT_OK


def _read_times(path) -> list[float]:
    """Detection/truth times: one float per line, or a detection log, or a
    ground-truth JSON with smoking_event_spans."""
    text = Path(path).read_text()
    if path.endswith(".json"):
        raw = json.loads(text)
        spans = raw.get("smoking_event_spans", [])
        return [float(a) for a, _b in spans]
    times = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "event":
            times.append(float(parts[1]))
        elif len(parts) == 1:
            try:
                times.append(float(parts[0]))
            except ValueError:
                continue
    return times


def cmd_evaluate(args) -> int:
    from smokesonar.fusion import EvalReport, evaluate, export_eval_report

    detections = _read_times(args.detections)
    truth = _read_times(args.truth)
    report = evaluate(detections, truth, args.match_window)
    print(
        f"A={report.actual} D={report.detected} C={report.correct} "
        f"accuracy={report.accuracy:.4f} false_alarm_rate={report.false_alarm_rate:.4f}"
    )
    if args.out:
        export_eval_report(args.out, report)
    return EXIT_OK


def cmd_config_dump(args) -> int:
    from smokesonar.config import dump_config

    dump_config(args.out)
    print(f"wrote default config to {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="smokesonar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("chirp-export", help="write the emitted frame stream as WAV")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--frames", type=int)
    p.set_defaults(func=cmd_chirp_export)

    p = sub.add_parser("simulate", help="render a scene corpus from a recipe")
    p.add_argument("--recipe", required=True, help="recipe JSON: seed + family counts")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--threads", type=int, default=1, help="1 guarantees bit-identical output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the hand-movement classifier")
    p.add_argument("--data", required=True, help="directory containing segments.npz")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--curve", help="write the training curve here")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run the detector over a recording")
    p.add_argument("--wav", required=True)
    p.add_argument("--model", help="trained model (optional in Bp3 mode)")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--mode", choices=["Hp3", "Bp3", "HBp", "HBp3"])
    p.add_argument("--out", help="detection log file (stdout otherwise)")
    p.add_argument("--summary", help="run summary JSON")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    p.add_argument("--detections", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--match-window", type=float, default=30.0)
    p.add_argument("--out", help="write the report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("config-dump", help="write the full default config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_config_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ModelError as exc:
        sys.stderr.write(f"model error: {exc}\n")
        return EXIT_MODEL
    except (DataError, ConfigError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except SonarError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
