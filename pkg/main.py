# main.py
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from agents.config_agent import ConfigAgent
from agents.pipeline_agent import PipelineAgent
from utils.errors import ShotPhaseError
from utils.log import configure_logging, get_logger

logger = get_logger("shotphase")


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON pipeline config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    common.add_argument("--dataset-root", default=argparse.SUPPRESS)
    common.add_argument("--force", action="store_true", default=argparse.SUPPRESS, help="ignore up-to-date outputs")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--log-level", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        prog="shotphase",
        description="Surgical phase classification of 10 s laparoscopic video shots.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("stats", parents=[common], help="per-phase duration statistics and overlap")

    p = sub.add_parser("extract-shots", parents=[common], help="draw the shot manifest")
    p.add_argument("--per-phase-target", type=int)
    p.add_argument("--per-video-per-phase", type=int)

    p = sub.add_parser("saliency-preview", parents=[common], help="saliency map and chosen patch of one frame")
    p.add_argument("image", nargs="?", help="image file; or use --video with --frame")
    p.add_argument("--video")
    p.add_argument("--frame", type=int)
    p.add_argument("--scales", type=int)
    p.add_argument("--orientations", type=int)
    p.add_argument("--min-wavelength", type=float)
    p.add_argument("--patch-side", type=int)
    p.add_argument("--out")

    p = sub.add_parser("extract-features", parents=[common], help="descriptor cache for the manifest's shots")
    p.add_argument("--stride", type=int)
    p.add_argument("--backbone")
    p.add_argument("--mode", choices=["resize_square", "salient_patch", "center_crop"])
    p.add_argument("--provider", help="'mock' or 'runtime:<model file>'")
    p.add_argument("--manifest")
    p.add_argument("--out")

    p = sub.add_parser("eval-knn", parents=[common], help="leave-one-out 1-NN over pooled descriptors")
    p.add_argument("--cache")
    p.add_argument("--pooling", choices=["max", "average"])
    p.add_argument("--metric", choices=["euclidean", "cosine"])
    p.add_argument("--with-time", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--time-scale", help="'auto', 'raw-minutes' or minutes")
    p.add_argument("--leave-one-video-out", action="store_true", default=None)
    p.add_argument("--out")

    p = sub.add_parser("train-lstm", parents=[common], help="train the LSTM over the split cycles")
    p.add_argument("--cache")
    p.add_argument("--with-time", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--time-scale")
    p.add_argument("--cycles", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--out")

    p = sub.add_parser("eval-lstm", parents=[common], help="evaluate a saved LSTM on its held-out shots")
    p.add_argument("--model")
    p.add_argument("--cache")
    p.add_argument("--out")

    p = sub.add_parser("report", parents=[common], help="merge result files into tables")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--format", choices=["text", "csv", "json"])

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic annotated corpus")
    p.add_argument("--root", help="defaults to the dataset root")
    p.add_argument("--spec", help="JSON file with synthetic corpus settings")
    p.add_argument("--num-videos", type=int)
    p.add_argument("--scale", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--fps", type=float)
    p.add_argument("--time-dependent", action=argparse.BooleanOptionalAction, default=None)

    sub.add_parser("run", parents=[common], help="every stage, skipping up-to-date ones")
    return parser


def config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    seed = getattr(args, "seed", None)
    return {
        "seed": seed,
        "train.seed": seed,
        "out_dir": getattr(args, "out_dir", None),
        "dataset_root": getattr(args, "dataset_root", None),
        "threads": getattr(args, "threads", None),
        "per_phase_target": getattr(args, "per_phase_target", None),
        "per_video_per_phase": getattr(args, "per_video_per_phase", None),
        "backbone": getattr(args, "backbone", None),
        "mode": getattr(args, "mode", None),
        "provider": getattr(args, "provider", None),
        "pooling": getattr(args, "pooling", None),
        "metric": getattr(args, "metric", None),
        "with_time": getattr(args, "with_time", None),
        "time_scale": getattr(args, "time_scale", None),
        "leave_one_video_out": getattr(args, "leave_one_video_out", None),
        "train.cycles": getattr(args, "cycles", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.hidden_size": getattr(args, "hidden_size", None),
        "saliency.num_scales": getattr(args, "scales", None),
        "saliency.num_orientations": getattr(args, "orientations", None),
        "saliency.min_wavelength": getattr(args, "min_wavelength", None),
    }


def run_command(args: argparse.Namespace) -> int:
    config_agent = ConfigAgent()
    config = config_agent.resolve(getattr(args, "config", None), config_overrides(args))
    agent = PipelineAgent(config, force=getattr(args, "force", False))
    cmd = args.command

    def opt(name: str) -> Optional[Path]:
        value = getattr(args, name, None)
        return Path(value) if value else None

    if cmd == "stats":
        print(agent.stats())
    elif cmd == "extract-shots":
        print(f"✅ Shot manifest: {agent.extract_shots()}")
    elif cmd == "saliency-preview":
        map_path, overlay_path = agent.saliency_preview(opt("image"), args.video, args.frame, opt("out"), args.patch_side)
        print(f"✅ Saliency map: {map_path}\n✅ Overlay: {overlay_path}")
    elif cmd == "extract-features":
        print(f"✅ Feature cache: {agent.extract_features(args.stride, opt('out'), opt('manifest'))}")
    elif cmd == "eval-knn":
        print(f"✅ 1-NN results: {agent.eval_knn(opt('cache'), opt('out'))}")
    elif cmd == "train-lstm":
        print(f"✅ LSTM results: {agent.train_lstm(opt('cache'), opt('out'))}")
    elif cmd == "eval-lstm":
        print(f"✅ LSTM evaluation: {agent.eval_lstm(opt('model'), opt('cache'), opt('out'))}")
    elif cmd == "report":
        outputs = agent.report([Path(p) for p in args.inputs] or None, args.format)
        text = outputs.get("text")
        print(text.read_text(encoding="utf-8") if text else "\n".join(str(p) for p in outputs.values()))
    elif cmd == "synth":
        raw: Dict[str, Any] = {}
        if args.spec:
            raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        for key in ("num_videos", "scale", "width", "height", "fps", "time_dependent"):
            if getattr(args, key) is not None:
                raw[key] = getattr(args, key)
        if "seed" not in raw and getattr(args, "seed", None) is not None:
            raw["seed"] = args.seed
        spec = config_agent.synthetic_spec(raw)
        print(f"✅ Synthetic corpus: {agent.synth(spec, opt('root'))}")
    elif cmd == "run":
        for name, path in agent.run_pipeline().items():
            print(f"- {name}: {path}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(getattr(args, "log_level", None))
    try:
        return run_command(args)
    except ShotPhaseError as e:
        logger.error("❌ %s", e)
        return e.exit_code
    except json.JSONDecodeError as e:
        logger.error("❌ invalid JSON: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
