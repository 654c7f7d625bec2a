"""Delay alignment -> Kalman filter -> optional neural post-filter."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from taylor_aec.config import read_kv_file
from taylor_aec.kalman import PbfdkfConfig, pbfdkf_run
from taylor_aec.model import NetConfig, PostFilter
from taylor_aec.signal import AudioClip
from taylor_aec.tde import DelayEstimate, align, gcc_phat
from taylor_aec.tensor import load_checkpoint, load_module_tensors

NET_CONFIG_NAME = "net.txt"
# GCC-PHAT locks onto the strongest arrival, which can trail the start of the
# echo path; shifting by less keeps the earlier taps inside the filter span.
ALIGN_MARGIN_MS = 10.0


@dataclass
class PipelineResult:
    output: AudioClip
    e: AudioClip
    y: AudioClip
    x_aligned: AudioClip
    delay: DelayEstimate
    seconds: dict = field(default_factory=dict)


def estimate_delay(d: AudioClip, x: AudioClip, max_delay_ms: float = 500.0) -> DelayEstimate:
    max_delay = min(int(d.sample_rate * max_delay_ms / 1000), min(len(d), len(x)) // 2)
    try:
        return gcc_phat(d, x, max_delay)
    except ValueError:
        # silent far end (or too short to search): nothing to align
        return DelayEstimate(0, 1.0)


def linear_stage(d: AudioClip, x: AudioClip, kalman_cfg: PbfdkfConfig | None = None,
                 max_delay_ms: float = 500.0, margin_ms: float = ALIGN_MARGIN_MS):
    est = estimate_delay(d, x, max_delay_ms)
    x_aligned = align(x, max(0, est.delay - int(d.sample_rate * margin_ms / 1000)))
    e, y = pbfdkf_run(kalman_cfg, x_aligned, d)
    return e, y, x_aligned, est


def process(d: AudioClip, x: AudioClip, postfilter: PostFilter | None = None,
            kalman_cfg: PbfdkfConfig | None = None, max_delay_ms: float = 500.0) -> PipelineResult:
    t0 = time.perf_counter()
    e, y, x_aligned, est = linear_stage(d, x, kalman_cfg, max_delay_ms)
    t1 = time.perf_counter()
    out = e
    if postfilter is not None:
        out, _ = postfilter.enhance(d, e, x_aligned)
    t2 = time.perf_counter()
    return PipelineResult(out, e, y, x_aligned, est, {"linear": t1 - t0, "post": t2 - t1, "total": t2 - t0})


def load_postfilter(checkpoint, net_cfg: NetConfig | None = None) -> PostFilter:
    """Rebuild a post-filter from a checkpoint; the config defaults to net.txt beside it."""
    checkpoint = Path(checkpoint)
    if net_cfg is None:
        cfg_path = checkpoint.parent / NET_CONFIG_NAME
        net_cfg = NetConfig.from_flat(read_kv_file(cfg_path)) if cfg_path.exists() else NetConfig()
    pf = PostFilter(net_cfg)
    tensors = load_checkpoint(checkpoint)
    load_module_tensors(pf, {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")})
    pf.eval()
    return pf
