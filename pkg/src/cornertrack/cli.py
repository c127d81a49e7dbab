"""Command-line entry point: track, eval, synth, train, selftest.

Exit codes: 0 success, 1 a check or run failed, 2 bad or missing inputs.
Inputs are validated before anything is written, so an input error leaves
no partial output behind.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .config import Config, ConfigError, load_config
from .cropping import InputError
from .evaluation import evaluate_boxes, aggregate, format_report, write_plot_data
from .head import ModelParams, init_model_params, load_params, save_params
from .io import SequenceError, load_sequence, read_boxes, save_overlay, write_boxes
from .synth import SequenceSpec, generate, write_sequence

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class UsageError(Exception):
    """Bad or missing inputs; reported with exit code 2."""


# --- config handling -----------------------------------------------------------

def resolve_config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "extractor", None) is not None:
        changes["extractor"] = args.extractor
    if getattr(args, "params", None) is not None:
        changes["params_path"] = args.params
    return cfg.replace(**changes) if changes else cfg


# --- track ---------------------------------------------------------------------

def cmd_track(args) -> int:
    from .tracker import CornerTracker, build_model

    cfg = resolve_config(args)
    seq = load_sequence(args.sequence)
    if len(seq.groundtruth) < 1:
        raise UsageError("frame-1 ground truth missing")
    first_frame = seq.frame(0)
    first_box = seq.gt_box(0)
    model = build_model(cfg)  # fails early on an unreadable parameter file
    out = Path(args.out)
    tracker = CornerTracker(cfg, model)
    boxes = [first_box]
    start = time.perf_counter()
    tracker.init(first_frame, first_box)
    for i in range(1, len(seq)):
        boxes.append(tracker.update(seq.frame(i)))
    elapsed = time.perf_counter() - start

    out.mkdir(parents=True, exist_ok=True)
    write_boxes(out / f"{seq.name}.txt", boxes)
    fps = len(seq) / elapsed if elapsed > 0 else 0.0
    (out / "timing.txt").write_text(f"frames = {len(seq)}\nseconds = {elapsed:.3f}\nfps = {fps:.2f}\n")
    if not args.no_overlays:
        overlay_dir = out / "overlays"
        overlay_dir.mkdir(exist_ok=True)
        for i, box in enumerate(boxes):
            shown = [box] + ([seq.gt_box(i)] if i < len(seq.groundtruth) else [])
            save_overlay(overlay_dir / f"{i + 1:05d}.png", seq.frame(i), shown)
    print(f"tracked {len(seq)} frames of {seq.name} at {fps:.1f} fps -> {out / (seq.name + '.txt')}")
    return EXIT_OK


# --- eval ----------------------------------------------------------------------

def _dataset_sequences(dataset: Path) -> list[Path]:
    if not dataset.is_dir():
        raise UsageError(f"{dataset} is not a directory")
    if (dataset / "groundtruth_rect.txt").is_file():
        return [dataset]
    return sorted(p for p in dataset.iterdir() if p.is_dir() and (p / "groundtruth_rect.txt").is_file())


def cmd_eval(args) -> int:
    dataset = Path(args.dataset)
    results = Path(args.results)
    seq_dirs = _dataset_sequences(dataset)
    if not seq_dirs:
        raise UsageError(f"{dataset}: no sequences with ground truth")
    if not results.is_dir():
        raise UsageError(f"{results} is not a directory")
    reports, flagged = {}, {}
    for d in seq_dirs:
        try:
            seq = load_sequence(d)
            result_file = results / f"{seq.name}.txt"
            if not result_file.is_file():
                raise SequenceError(f"no result file {result_file.name}")
            pred = read_boxes(result_file)
            if not len(pred) == len(seq.groundtruth) == len(seq):
                raise SequenceError(f"length mismatch: {len(pred)} results, "
                                    f"{len(seq.groundtruth)} ground-truth rows, {len(seq)} frames")
            reports[seq.name] = evaluate_boxes(pred, seq.groundtruth)
        except (SequenceError, InputError, ValueError) as exc:
            flagged[d.name] = str(exc)
    for name, why in flagged.items():
        print(f"flagged {name}: {why}", file=sys.stderr)
    if not reports:
        raise UsageError("no sequence could be evaluated")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, r in reports.items():
        (out / f"{name}_report.txt").write_text(format_report(r, include_fps=False))
        write_plot_data(out / f"{name}_plot.txt", r)
    agg = aggregate(list(reports.values()))
    text = format_report(agg, include_fps=False)
    text += f"sequences = {len(reports)}\n"
    text += "".join(f"flagged = {name}: {why}\n" for name, why in flagged.items())
    (out / "aggregate_report.txt").write_text(text)
    write_plot_data(out / "aggregate_plot.txt", agg)
    print(f"success AUC {agg.success_auc:.4f}, precision@20 {agg.precision_at_20:.4f}, "
          f"norm. precision AUC {agg.norm_precision_auc:.4f} over {len(reports)} sequences")
    return EXIT_OK


# --- synth ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read spec {args.config}: {exc}") from None
    if args.seed is not None:
        data["seed"] = args.seed
    spec = SequenceSpec.from_dict(data)
    seq = generate(spec)
    out = write_sequence(seq, args.out)
    print(f"wrote {spec.length} frames to {out}")
    return EXIT_OK


# --- train ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    pairs: int = 8
    steps: int = 500
    step_size: float = 0.005
    momentum: float = 0.9
    head_width: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.pairs < 1 or self.steps < 0 or self.step_size <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError(f"invalid training config {self}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown training config keys: {unknown}")
        return cls(**d)


def cmd_train(args) -> int:
    from .extractors import ToyConvExtractor
    from .training import overfit_train, synthetic_pairs

    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read training config {args.config}: {exc}") from None
    if args.seed is not None:
        data["seed"] = args.seed
    tc = TrainConfig.from_dict(data)
    out = Path(args.out)
    extractor = ToyConvExtractor(seed=tc.seed)
    params: ModelParams = init_model_params(extractor.channels, tc.head_width, tc.seed)
    pairs = synthetic_pairs(tc.pairs, seed=tc.seed)
    log_lines = []

    def log(step, value):
        log_lines.append(f"{step} {value:.8f}")
        if step % 50 == 0:
            print(f"step {step:4d}  loss {value:.6f}")

    result = overfit_train(pairs, tc.steps, tc.step_size, extractor=extractor, params=params,
                           momentum=tc.momentum, seed=tc.seed, log=log)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(out, result.params)
    Path(str(out) + ".loss.txt").write_text("\n".join(log_lines) + "\n")
    (Path(str(out) + ".json")).write_text(json.dumps(asdict(tc), indent=2, sort_keys=True) + "\n")
    print(f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}; parameters written to {out}")
    return EXIT_OK


# --- selftest --------------------------------------------------------------------

def cmd_selftest(args) -> int:
    from .selftest import main as selftest_main

    return selftest_main()


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the configured seed")

    p = argparse.ArgumentParser(prog="cornertrack", description="Corner-based Siamese tracker toolkit")
    p.add_argument("--dump-config", action="store_true",
                   help="print the effective tracker config (defaults merged with --config) and exit")
    p.add_argument("--config", dest="top_config", help=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("track", parents=[common], help="track one sequence directory")
    t.add_argument("sequence", help="directory with frames and groundtruth_rect.txt")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--extractor", choices=("toy", "oracle", "file"))
    t.add_argument("--params", help="parameter file for --extractor file")
    t.add_argument("--no-overlays", action="store_true", help="skip writing overlay images")
    t.add_argument("--dump-config", action="store_true", help=argparse.SUPPRESS)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", parents=[common], help="score result files against ground truth")
    e.add_argument("dataset", help="directory of sequence directories (or one sequence)")
    e.add_argument("results", help="directory holding <sequence>.txt box files")
    e.add_argument("--out", required=True, help="report directory")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic sequence")
    s.add_argument("--out", required=True, help="sequence directory to create")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("train", parents=[common], help="overfit the heads on synthetic pairs")
    r.add_argument("--out", required=True, help="parameter file to write")
    r.set_defaults(func=cmd_train)

    st = sub.add_parser("selftest", help="run the built-in oracle checks")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.dump_config:
            path = getattr(args, "config", None) or args.top_config
            print((load_config(path) if path else Config()).to_json())
            return EXIT_OK
        if args.command is None:
            parser.print_help()
            return EXIT_INPUT
        return args.func(args)
    except (UsageError, SequenceError, ConfigError, InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
