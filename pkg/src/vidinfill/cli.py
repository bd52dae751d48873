"""Command-line entry point: ``vidinfill {train,infill,splice,curate,evaluate,report}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError, DivergenceError, EmbedderError, PartitionError, ShapeError, TensorFormatError

log = logging.getLogger("vidinfill")

VALIDATION_ERRORS = (ConfigError, ShapeError, PartitionError, TensorFormatError, FileNotFoundError, ValueError)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg


def _infiller(args):
    from .pipeline import InfillModel

    inf = InfillModel.from_checkpoint(args.checkpoint)
    for item in args.set or []:
        key, value = item.split("=", 1)
        inf.cfg.set(key.strip(), value)
    return InfillModel(inf.model, inf.cfg)


def cmd_train(args) -> int:
    from .pipeline import plot_report, train
    from .metrics import MetricReport

    cfg = _load_config(args)
    if args.out:
        cfg.run.out_dir = args.out
    result = train(cfg)
    plot_report(MetricReport(), cfg.run.out_dir, result.history)
    first, last = result.history[0]["loss"], result.history[-1]["loss"]
    print(f"trained {len(result.history)} steps; loss {first:.4f} -> {last:.4f}; checkpoint {result.checkpoints[-1]}")
    return 0


def cmd_infill(args) -> int:
    from .media import PixelVideo, load_video, save_video

    inf = _infiller(args)
    pre, post = load_video(args.preceding), load_video(args.following)
    mid = inf.infill(pre, post, args.length, use_gfm=not args.no_gfm, use_bfg=not args.no_bfg, seed=args.seed)
    out = PixelVideo.concat([pre, mid, post]) if args.full else mid
    save_video(out, args.out)
    print(f"wrote {len(out)} frames to {args.out}")
    return 0


def cmd_splice(args) -> int:
    from .media import load_video, save_video
    from .pipeline import SpliceJob, splice

    inf = _infiller(args)
    job = SpliceJob([load_video(p) for p in args.clips], args.length, args.mode)
    video = splice(inf, job, seed=args.seed)
    save_video(video, args.out)
    print(f"wrote {len(video)} frames to {args.out}")
    return 0


def cmd_curate(args) -> int:
    from .curation import CurationThresholds, curate, write_manifest
    from .media import load_video

    thresholds = CurationThresholds(args.t_lower, args.t_upper, args.l_test)
    entries = curate({p: load_video(p) for p in args.videos}, thresholds)
    write_manifest(args.out, entries)
    print(f"selected {len(entries)} windows -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from .curation import read_manifest
    from .media import load_video
    from .pipeline import evaluate, plot_report

    inf = _infiller(args)
    entries = read_manifest(args.manifest)
    videos = {vid: load_video(vid) for vid in sorted({e["video_id"] for e in entries})}
    gen = lambda pre, post, l: inf.infill(pre, post, l, use_gfm=not args.no_gfm, use_bfg=not args.no_bfg, seed=args.seed)
    echo = {"checkpoint": str(args.checkpoint), "use_gfm": not args.no_gfm, "use_bfg": not args.no_bfg, "seed": args.seed}
    report = evaluate(gen, entries, videos, echo)
    report.write(args.out)
    plot_report(report, args.plots or Path(args.out).parent)
    print(json.dumps({"count": len(report.records), "aggregate": report.aggregate}))
    return 0


def cmd_report(args) -> int:
    from .metrics import MetricReport
    from .pipeline import plot_report

    report = MetricReport.read(args.report) if args.report else MetricReport()
    history = None
    if args.run:
        path = Path(args.run) / "metrics.jsonl"
        history = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    out = args.out or (Path(args.run) if args.run else Path(args.report).parent)
    written = plot_report(report, out, history)
    print(json.dumps({"aggregate": report.aggregate, "plots": [str(p) for p in written]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidinfill", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False):
        sp.add_argument("--config", help="INI run config")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override (repeatable)")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("train", help="train a denoiser")
    common(sp)
    sp.add_argument("--out", help="run directory (overrides run.out_dir)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infill", help="generate a transition between two videos")
    common(sp, checkpoint=True)
    sp.add_argument("--preceding", required=True)
    sp.add_argument("--following", required=True)
    sp.add_argument("--length", type=int, required=True)
    sp.add_argument("--no-gfm", action="store_true", help="i.i.d. Gaussian initial noise")
    sp.add_argument("--no-bfg", action="store_true", help="drop boundary-frame guidance")
    sp.add_argument("--full", action="store_true", help="write preceding + transition + following")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_infill)

    sp = sub.add_parser("splice", help="join several clips with regenerated transitions")
    common(sp, checkpoint=True)
    sp.add_argument("--clips", nargs="+", required=True)
    sp.add_argument("--length", type=int, default=12)
    sp.add_argument("--mode", choices=["replace-junction", "insert-noise"], default="replace-junction")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_splice)

    sp = sub.add_parser("curate", help="select test windows by boundary-frame flow magnitude")
    common(sp)
    sp.add_argument("--videos", nargs="+", required=True)
    sp.add_argument("--t-lower", type=float, required=True)
    sp.add_argument("--t-upper", type=float, default=float("inf"))
    sp.add_argument("--l-test", type=int, default=12)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_curate)

    sp = sub.add_parser("evaluate", help="infill manifest windows and score them")
    common(sp, checkpoint=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--no-gfm", action="store_true")
    sp.add_argument("--no-bfg", action="store_true")
    sp.add_argument("--out", required=True)
    sp.add_argument("--plots")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="plot a metric report and/or a training loss log")
    common(sp)
    sp.add_argument("--report")
    sp.add_argument("--run")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, EmbedderError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
