"""Command-line entry point: synth, process, train, evaluate, ablate.

Every subcommand reads an optional flat key=value config (``--config``) whose
keys can be overridden with repeated ``--set key=value`` flags. Failures exit
nonzero with one JSON error line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import torch

from taylor_aec.experiment import ExperimentConfig


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config, args.set)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    torch.set_num_threads(cfg.train.threads)
    return cfg


def _dataset_dir(path: Path, out_dir: Path, jobs: int) -> Path:
    """A directory is used as-is; a file is a manifest synthesized under out_dir/data."""
    if path.is_dir():
        return path
    from taylor_aec.simulate import synth_dataset

    data = out_dir / "data"
    summary = synth_dataset(path, data, jobs=jobs)
    if summary["errors"]:
        raise ValueError(f"dataset synthesis failed: {summary['errors']}")
    return data


def cmd_synth(args) -> dict:
    from taylor_aec.simulate import synth_dataset

    summary = synth_dataset(args.manifest, args.out_dir, jobs=args.jobs)
    if summary["errors"]:
        raise ValueError(f"{len(summary['errors'])} item(s) failed: {summary['errors']}")
    return summary


def cmd_process(args) -> dict:
    from taylor_aec.metrics import rtf
    from taylor_aec.pipeline import load_postfilter, process
    from taylor_aec.signal import read_wav, write_wav

    cfg = _config(args)
    d, x = read_wav(args.d), read_wav(args.x)
    pf = load_postfilter(args.checkpoint) if args.checkpoint else None
    result = process(d, x, pf, cfg.kalman)
    write_wav(args.out, result.output)
    return {"delay": result.delay.delay, "confidence": result.delay.confidence,
            "rtf": rtf(result.seconds["total"], d.duration)}


def cmd_train(args) -> dict:
    from taylor_aec.train import train

    cfg = _config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(out_dir / "experiment.txt")
    data = _dataset_dir(Path(args.dataset), out_dir, args.jobs)
    trainer = train(data, cfg.net, cfg.loss, cfg.train, out_dir, args.resume, cfg.kalman)
    return {"steps": trainer.step, "epochs": trainer.epoch, "params": trainer.model.param_count(),
            "checkpoint": str(out_dir / "final.bin")}


def cmd_evaluate(args) -> dict:
    from taylor_aec.evaluate import evaluate

    cfg = _config(args)
    records = evaluate(args.dataset, args.checkpoint, args.report, jobs=args.jobs, kalman_cfg=cfg.kalman)
    return {"summary": [r for r in records if r["id"] == "mean"], "report": args.report}


def cmd_ablate(args) -> dict:
    from taylor_aec.evaluate import ablate

    cfg = _config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(out_dir / "experiment.txt")
    rows = ablate(args.manifest, cfg, out_dir, args.eval_manifest, jobs=args.jobs)
    sys.stdout.write((out_dir / "ablation.txt").read_text())
    return {"configs": [r["config"] for r in rows], "params": [r["params"] for r in rows]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taylor-aec", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--seed", type=int, help="shorthand for --set train.seed=N")
    common.add_argument("--jobs", type=int, default=1, help="parallel items")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize a dataset from a manifest")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("process", parents=[common], help="align, Kalman filter, optional post-filter")
    p.add_argument("d", help="microphone WAV")
    p.add_argument("x", help="far-end reference WAV")
    p.add_argument("out", help="output WAV")
    p.add_argument("checkpoint", nargs="?", help="post-filter checkpoint")
    p.set_defaults(fn=cmd_process)

    p = sub.add_parser("train", parents=[common], help="train the post-filter")
    p.add_argument("dataset", help="manifest file or synthesized dataset directory")
    p.add_argument("out_dir")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="per-scenario ERLE / SI-SDR / RTF report")
    p.add_argument("dataset")
    p.add_argument("report", help="output JSON-lines report")
    p.add_argument("--checkpoint")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="base / +TFCM / +gated PE comparison")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--eval-manifest", help="held-out items (default: score the training items)")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        result = args.fn(args)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                     "command": args.command}) + "\n")
        return 1
    sys.stdout.write(json.dumps({"ok": True, "command": args.command, **result}) + "\n")
    return 0
