"""Command line entry point: ``endoscan <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..servo import ServoAbort
from .config import ConfigError, load_scenario, parse_config, scenario_names
from . import runner


def _config(args):
    cfg = load_scenario(args.config)
    return cfg.with_overrides(seed=args.seed, mode=getattr(args, "mode", None), out=args.out)


def _out(args, cfg=None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path("out") / (cfg.name if cfg is not None else "bench")


def cmd_scan(args) -> int:
    cfg = _config(args)
    res = runner.run(cfg, _out(args, cfg))
    print(res.metrics.to_json(), end="")
    print(f"wall {res.wall_time_s:.2f} s, {res.metrics.throughput_fps:.1f} frames/s", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    """Scan, retarget, fire and rescan; default ablation settings if the file has none."""
    cfg = _config(args)
    if cfg.ablation is None:
        data = cfg.model_dump()
        data["ablation"] = {}
        cfg = parse_config(data)
    res = runner.run(cfg, _out(args, cfg))
    print(res.metrics.to_json(), end="")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    result = runner.calibrate(cfg)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    (out / "calibration.json").write_text(text)
    print(text, end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    result = runner.workspace_sweep(cfg)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(result.to_json())
    print(result.to_json(), end="")
    return 0


def cmd_bench(args) -> int:
    corpus = Path(args.corpus)
    frames = runner.load_corpus(corpus) if corpus.is_dir() else []
    if len(frames) < 2:
        frames = runner.make_bench_corpus(args.frames, args.seed or 0)
        runner.save_corpus(frames, corpus)
        frames = runner.load_corpus(corpus)
    result = runner.bench_registration(frames)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(result.to_json())
    print(result.to_json(), end="")
    return 0


def cmd_render(args) -> int:
    cfg = _config(args)
    path = runner.render(cfg, _out(args, cfg))
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="endoscan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help="scenario JSON file or bundled name (" + ", ".join(scenario_names()) + ")"):
        sp.add_argument("config", help=config_help)
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--out", default=None, help="output directory")

    for name, fn, with_mode in (("scan", cmd_scan, True), ("calibrate", cmd_calibrate, False),
                                ("ablate", cmd_ablate, True), ("sweep", cmd_sweep, False),
                                ("render", cmd_render, False)):
        sp = sub.add_parser(name)
        common(sp)
        if with_mode:
            sp.add_argument("--mode", choices=("open", "closed"), default=None)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("bench", help="registration throughput on a directory of PGM frames")
    sp.add_argument("corpus", help="directory of frames; generated there if empty")
    sp.add_argument("--frames", type=int, default=1001, help="frames to generate if needed")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except ServoAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
