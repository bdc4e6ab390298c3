"""Command line entry point: gen, frames, render, graphs, forward, train-toy, eval, bench."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .events import (
    EVS_VERSION, EventStream, SensorGeometry, SyntheticSpec, generate_synthetic, read_stream, write_stream,
)
from .frames import EFR_VERSION, FrameConfig, build_frames, read_frames, render_frame, write_frames, write_pgm
from .graphs import GraphConfig, build_graph_list, read_graphs, write_graphs
from .model import FUSION_MODES, HEAD_ORDERS, Sample, load_model, tensorize_graphs
from .oracle import naive_frames, naive_graphs
from .training import evaluate_manifest, format_accuracy, read_manifest, toy_config, train_toy

log = logging.getLogger("mtga")

FORMAT_VERSIONS = f"EVS{EVS_VERSION} EFR{EFR_VERSION} MTG1"


def _voxel(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"voxel size must look like 4x4, got {text!r}") from None
    return h, w


def _sizes(text: str) -> list[int]:
    return [int(float(v)) for v in text.split(",") if v.strip()]


# --------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    spec = SyntheticSpec(
        class_id=args.class_id, duration_ms=args.duration_ms,
        geometry=SensorGeometry(args.width, args.height),
        pattern_rate=args.pattern_rate, noise_rate=args.noise_rate,
    )
    stream = generate_synthetic(spec, args.seed)
    write_stream(stream, args.out, args.format)
    log.info("wrote %d events to %s", len(stream), args.out)
    return 0


def cmd_frames(args) -> int:
    stream = read_stream(args.input)
    cfg = FrameConfig(geometry=stream.geometry, bins=args.bins)
    if args.oracle:
        frames = naive_frames(stream, cfg)
    else:
        frames = build_frames(stream, cfg, threads=args.threads)
    write_frames(frames, args.out)
    return 0


def cmd_render(args) -> int:
    write_pgm(render_frame(read_frames(args.input), args.bin), args.out)
    return 0


def cmd_graphs(args) -> int:
    stream = read_stream(args.input)
    h, w = args.voxel
    cfg = GraphConfig(bins=args.bins, slices_per_bin=args.slices_per_bin, voxel_h=h, voxel_w=w,
                      top_k=args.top_k, points=args.points, radius=args.radius)
    glist = naive_graphs(stream, cfg) if args.oracle else build_graph_list(stream, cfg, args.threads)
    write_graphs(glist, args.out)
    return 0


def cmd_forward(args) -> int:
    model = load_model(ad.load_checkpoint(args.model))
    frames = read_frames(args.frames)
    glist = read_graphs(args.graphs)
    probs = model.predict(Sample(frames.data, tensorize_graphs(glist, model.cfg.top_k)))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "probability"])
        for c, p in enumerate(probs.tolist()):
            writer.writerow([c, f"{p:.9g}"])
    print(f"predicted class {int(np.argmax(probs))}")
    return 0


def _model_overrides(args) -> dict:
    out = {}
    if args.fusion_layers is not None:
        out["fusion_layers"] = args.fusion_layers
        out["frame_strides"] = (2,) + (1,) * (args.fusion_layers - 1)
    for name in ("fusion_mode", "head_order", "bins"):
        if getattr(args, name) is not None:
            out[name] = getattr(args, name)
    out["use_frame_branch"] = not args.no_frame_branch
    out["use_graph_branch"] = not args.no_graph_branch
    out["use_positional_encoding"] = not args.no_positional_encoding
    out["use_self_attention"] = not args.no_self_attention
    return out


def cmd_train_toy(args) -> int:
    cfg = toy_config(args.classes, **_model_overrides(args))
    result = train_toy(classes=args.classes, steps=args.steps, seed=args.seed,
                       per_class=args.per_class, batch_size=args.batch_size, lr=args.lr, cfg=cfg)
    ad.save_checkpoint(result.model.checkpoint_state(), args.out)
    print(f"steps {len(result.losses)} final loss {result.losses[-1]:.6f} "
          f"train accuracy {100 * result.train_accuracy:.2f}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(ad.load_checkpoint(args.model))
    report = evaluate_manifest(model, read_manifest(args.manifest), threads=args.threads)
    for key in ("Acc", "Acc1", "Acc2"):
        print(f"{key}: {format_accuracy(report[key])}")
    return 0


def bench_stream(events: int, seed: int):
    """Synthetic 128x128 stream with close to ``events`` events over one second."""
    if events <= 0:
        return EventStream.empty(SensorGeometry(128, 128))
    spec = SyntheticSpec(duration_ms=1000.0, pattern_rate=0.9 * events, noise_rate=0.1 * events)
    return generate_synthetic(spec, seed)


def run_bench(sizes, seed: int = 0, threads: int = 1, repeats: int = 3, bins: int = 60) -> list[dict]:
    rows = []
    gcfg = GraphConfig(bins=bins)
    for n in sizes:
        stream = bench_stream(n, seed)
        fcfg = FrameConfig(geometry=stream.geometry, bins=bins)
        # one untimed pass first, so allocator warm-up is not billed to the first size
        build_frames(stream, fcfg, threads=threads)
        build_graph_list(stream, gcfg, threads=threads)
        frame_s, graph_s = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            build_frames(stream, fcfg, threads=threads)
            t1 = time.perf_counter()
            build_graph_list(stream, gcfg, threads=threads)
            t2 = time.perf_counter()
            frame_s.append(t1 - t0)
            graph_s.append(t2 - t1)
        total = min(frame_s) + min(graph_s)
        rows.append({
            "events": len(stream),
            "frames_ms": 1e3 * min(frame_s),
            "graphs_ms": 1e3 * min(graph_s),
            "events_per_second": len(stream) / total if len(stream) and total > 0 else 0.0,
        })
    return rows


def scaling_ratio(rows, small: int = 100_000, large: int = 1_000_000):
    """Ratio of larger to smaller per-event cost between the rows nearest ``small`` and ``large``."""
    def nearest(target):
        cands = [r for r in rows if r["events"] > 0]
        return min(cands, key=lambda r: abs(np.log(r["events"] / target))) if cands else None

    a, b = nearest(small), nearest(large)
    if a is None or b is None or a is b:
        return None
    ca = (a["frames_ms"] + a["graphs_ms"]) / a["events"]
    cb = (b["frames_ms"] + b["graphs_ms"]) / b["events"]
    return max(ca, cb) / min(ca, cb)


def cmd_bench(args) -> int:
    rows = run_bench(args.sizes, args.seed, args.threads, args.repeats)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=["events", "frames_ms", "graphs_ms", "events_per_second"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.3f}" if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if out is not sys.stdout:
            out.close()
    ratio = scaling_ratio(rows)
    if ratio is not None:
        print(f"per-event cost ratio (1e5 vs 1e6): {ratio:.3f}", file=sys.stderr)
        if ratio >= 2.0:
            print("scaling is not near-linear", file=sys.stderr)
            return 1
    return 0


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtga", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"mtga {__version__} ({FORMAT_VERSIONS})")
    parser.add_argument("--config", help="JSON file of flag defaults (flags take precedence)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic event stream")
    p.add_argument("--class", dest="class_id", type=int, required=True)
    p.add_argument("--duration-ms", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--pattern-rate", type=float, default=SyntheticSpec.pattern_rate)
    p.add_argument("--noise-rate", type=float, default=SyntheticSpec.noise_rate)
    p.add_argument("--format", choices=["binary", "csv"], default="binary")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("frames", help="bin an EVS1 stream into EFR1 event frames")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--oracle", action="store_true", help="use the brute-force reference")
    p.set_defaults(func=cmd_frames)

    p = sub.add_parser("render", help="render one frame as a PGM image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--bin", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("graphs", help="build the voxel graph list as JSON")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--slices-per-bin", type=int, default=3)
    p.add_argument("--voxel", type=_voxel, default=(4, 4), help="HxW voxel size, e.g. 4x4")
    p.add_argument("--top-k", type=int, default=32)
    p.add_argument("--points", type=int, default=16)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--oracle", action="store_true", help="use the brute-force reference")
    p.set_defaults(func=cmd_graphs)

    p = sub.add_parser("forward", help="class probabilities for one sample")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("train-toy", help="train a tiny model on the synthetic task")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=24)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--bins", type=int)
    p.add_argument("--fusion-layers", type=int)
    p.add_argument("--fusion-mode", choices=FUSION_MODES)
    p.add_argument("--head-order", choices=HEAD_ORDERS)
    p.add_argument("--no-frame-branch", action="store_true")
    p.add_argument("--no-graph-branch", action="store_true")
    p.add_argument("--no-positional-encoding", action="store_true")
    p.add_argument("--no-self-attention", action="store_true")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", help="Acc / Acc1 / Acc2 over a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="representation throughput sweep")
    p.add_argument("--sizes", type=_sizes, default=[10_000, 100_000, 1_000_000])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = json.loads(Path(known.config).read_text(encoding="utf-8"))
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sub in subparsers.choices.values():
        dests = {a.dest for a in sub._actions}
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in values.items()
                            if k.replace("-", "_") in dests})


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        _apply_config_file(parser, argv)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
