"""Per-scenario evaluation reports and the ablation matrix."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from taylor_aec.config import read_kv_file
from taylor_aec.experiment import ExperimentConfig
from taylor_aec.kalman import PbfdkfConfig
from taylor_aec.metrics import erle, rtf, si_sdr
from taylor_aec.pipeline import load_postfilter, process
from taylor_aec.signal import read_wav
from taylor_aec.simulate import synth_dataset
from taylor_aec.train import Trainer, dataset_items, prepare_item

log = logging.getLogger(__name__)

SCENARIOS = ("ST-FE", "ST-NE", "DT")

# component toggles, in the order features are added
ABLATIONS = (
    ("base", dict(use_tfcm=False, gated_pe=False)),
    ("+TFCM", dict(use_tfcm=True, gated_pe=False)),
    ("+gated PE", dict(use_tfcm=True, gated_pe=True)),
)


def item_scenario(item_dir: Path) -> str:
    """Scenario from metadata, or from which signals carry energy when absent."""
    meta_path = item_dir / "meta.txt"
    if meta_path.exists():
        scenario = read_kv_file(meta_path).get("scenario")
        if scenario in SCENARIOS:
            return scenario
    near = np.any(read_wav(item_dir / "s.wav").samples)
    echo = np.any(read_wav(item_dir / "echo.wav").samples)
    if echo and not near:
        return "ST-FE"
    return "DT" if echo else "ST-NE"


def evaluate_item(item_dir, postfilter=None, kalman_cfg: PbfdkfConfig | None = None) -> dict:
    """ERLE on far-end single talk, SI-SDR against the near end otherwise; RTF always."""
    item_dir = Path(item_dir)
    d, x = read_wav(item_dir / "d.wav"), read_wav(item_dir / "x.wav")
    scenario = item_scenario(item_dir)
    t0 = time.perf_counter()
    result = process(d, x, postfilter, kalman_cfg)
    elapsed = time.perf_counter() - t0
    record = {"id": item_dir.name, "scenario": scenario, "erle_db": None, "si_sdr_db": None,
              "rtf": rtf(elapsed, d.duration)}
    if scenario == "ST-FE":
        record["erle_db"] = erle(d, result.output)
    else:
        record["si_sdr_db"] = si_sdr(read_wav(item_dir / "s.wav"), result.output)
    return record


def _evaluate_worker(args):
    item_dir, checkpoint, kalman_cfg = args
    torch.set_num_threads(1)
    pf = load_postfilter(checkpoint) if checkpoint else None
    return evaluate_item(item_dir, pf, kalman_cfg)


def summarize(records: list) -> list:
    """Mean of each metric per scenario (metrics that are all None stay None)."""
    out = []
    for scenario in SCENARIOS:
        rows = [r for r in records if r["scenario"] == scenario]
        if not rows:
            continue
        summary = {"id": "mean", "scenario": scenario, "items": len(rows)}
        for key in ("erle_db", "si_sdr_db", "rtf"):
            vals = [r[key] for r in rows if r[key] is not None]
            summary[key] = float(np.mean(vals)) if vals else None
        out.append(summary)
    return out


def evaluate(dataset_dir, checkpoint=None, report=None, jobs: int = 1,
             kalman_cfg: PbfdkfConfig | None = None, postfilter=None) -> list:
    """Evaluate every item under ``dataset_dir``; item records then per-scenario means.

    When ``report`` is given, records are written there one JSON object per line.
    """
    dirs = dataset_items(dataset_dir)
    if jobs > 1 and postfilter is None:
        with ProcessPoolExecutor(jobs) as pool:
            records = list(pool.map(_evaluate_worker, [(p, checkpoint, kalman_cfg) for p in dirs]))
    else:
        pf = postfilter if postfilter is not None else (load_postfilter(checkpoint) if checkpoint else None)
        records = [evaluate_item(p, pf, kalman_cfg) for p in dirs]
    records += summarize(records)
    if report:
        Path(report).parent.mkdir(parents=True, exist_ok=True)
        with open(report, "w") as fh:
            for r in records:
                fh.write(json.dumps(r) + "\n")
    return records


def _means(records: list) -> dict:
    out = {}
    for r in records:
        if r["id"] == "mean":
            out[r["scenario"]] = r
    return out


def ablate(manifest, cfg: ExperimentConfig, out_dir, eval_manifest=None, jobs: int = 1) -> list:
    """Train and evaluate each ablation configuration from the same data and seed.

    Items are synthesized from ``manifest`` (and ``eval_manifest`` for a held-out
    set; without one the training items are scored). Returns one row per config.
    """
    out_dir = Path(out_dir)
    train_dir = out_dir / "data" / "train"
    summary = synth_dataset(manifest, train_dir, jobs=jobs)
    if summary["errors"]:
        raise ValueError(f"dataset synthesis failed: {summary['errors']}")
    eval_dir = train_dir
    if eval_manifest:
        eval_dir = out_dir / "data" / "eval"
        summary = synth_dataset(eval_manifest, eval_dir, jobs=jobs)
        if summary["errors"]:
            raise ValueError(f"dataset synthesis failed: {summary['errors']}")
    items = [prepare_item(p, cfg.kalman) for p in dataset_items(train_dir)]
    linear = _means(evaluate(eval_dir, kalman_cfg=cfg.kalman))

    train_cfg = cfg.train
    if train_cfg.max_steps:
        # step budget governs; epochs only bound it from above
        epochs = -(-train_cfg.max_steps * train_cfg.batch_size // len(items))
        train_cfg = replace(train_cfg, epochs=max(train_cfg.epochs, epochs), save_every=0)
    rows = []
    for name, toggles in ABLATIONS:
        net_cfg = replace(cfg.net, **toggles)
        trainer = Trainer(net_cfg, cfg.loss, train_cfg)
        run_dir = out_dir / name.replace(" ", "_").replace("+", "plus_")
        t0 = time.perf_counter()
        history = trainer.fit(items, run_dir)
        trainer.save(run_dir / "final.bin")
        train_s = time.perf_counter() - t0
        means = _means(evaluate(eval_dir, kalman_cfg=cfg.kalman, postfilter=trainer.model,
                                report=run_dir / "report.jsonl"))
        row = {"config": name, "params": trainer.model.param_count(), "steps": trainer.step,
               "initial_loss": history[0]["total"] if history else None,
               "final_loss": history[-1]["total"] if history else None, "train_seconds": train_s}
        for scenario, key in (("ST-FE", "erle_db"), ("ST-NE", "si_sdr_db"), ("DT", "si_sdr_db")):
            value = means.get(scenario, {}).get(key)
            base = linear.get(scenario, {}).get(key)
            row[f"{scenario}_{key}"] = value
            row[f"{scenario}_{key}_vs_linear"] = None if value is None or base is None else value - base
        rows.append(row)
        log.info("ablation %s: %d params, final loss %s", name, row["params"], row["final_loss"])

    for row in rows[1:]:
        for key in [k for k in row if k.endswith(("erle_db", "si_sdr_db"))]:
            if row[key] is not None and rows[0][key] is not None:
                row[f"{key}_vs_base"] = row[key] - rows[0][key]
    with open(out_dir / "ablation.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    (out_dir / "ablation.txt").write_text(format_table(rows, linear))
    return rows


def _cell(value, fmt="{:.2f}") -> str:
    return "-" if value is None else fmt.format(value)


def format_table(rows: list, linear: dict | None = None) -> str:
    header = ["config", "params", "steps", "loss0", "loss", "ST-FE ERLE", "ST-NE SI-SDR", "DT SI-SDR"]
    lines = []
    if linear:
        lines.append(["linear only", "-", "-", "-", "-",
                      _cell(linear.get("ST-FE", {}).get("erle_db")),
                      _cell(linear.get("ST-NE", {}).get("si_sdr_db")),
                      _cell(linear.get("DT", {}).get("si_sdr_db"))])
    for r in rows:
        lines.append([r["config"], str(r["params"]), str(r["steps"]), _cell(r["initial_loss"], "{:.4f}"),
                      _cell(r["final_loss"], "{:.4f}"), _cell(r["ST-FE_erle_db"]),
                      _cell(r["ST-NE_si_sdr_db"]), _cell(r["DT_si_sdr_db"])])
    widths = [max(len(h), *(len(l[i]) for l in lines)) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    body = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    body += [fmt.format(*l) for l in lines]
    return "\n".join(body) + "\n"
