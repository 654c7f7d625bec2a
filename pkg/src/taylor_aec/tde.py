"""GCC-PHAT bulk delay estimation and far-end alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from taylor_aec.signal import AudioClip

PHAT_FLOOR = 1e-12


@dataclass(frozen=True)
class DelayEstimate:
    delay: int
    confidence: float


def gcc_phat(d: AudioClip, x: AudioClip, max_delay: int | None = None,
             analysis_seconds: float | None = 1.0) -> DelayEstimate:
    """Lag (samples) by which d trails x, searched over [0, max_delay].

    The correlation is computed over the first ``analysis_seconds`` of signal
    beyond the delay window, or the whole clip when that is ``None``.
    """
    if d.sample_rate != x.sample_rate:
        raise ValueError(f"sample rate mismatch: {d.sample_rate} vs {x.sample_rate}")
    if max_delay is None:
        max_delay = d.sample_rate // 2
    n = min(len(d), len(x))
    if n < 2 * max_delay or n == 0:
        raise ValueError(f"clips too short: need >= {2 * max_delay} samples, have {n}")
    if analysis_seconds is not None:
        n = min(n, max_delay + int(analysis_seconds * d.sample_rate))
    dd = d.samples[:n].astype(np.float64)
    xx = x.samples[:n].astype(np.float64)
    if not np.any(dd) or not np.any(xx):
        raise ValueError("no signal")
    nfft = 1 << (2 * n - 1).bit_length()
    cross = np.fft.rfft(dd, nfft) * np.conj(np.fft.rfft(xx, nfft))
    cross /= np.maximum(np.abs(cross), PHAT_FLOOR)
    cc = np.fft.irfft(cross, nfft)[: max_delay + 1]
    lag = int(np.argmax(cc))
    mean_abs = np.mean(np.abs(cc))
    confidence = float(max(cc[lag] / mean_abs, 1.0)) if mean_abs > 0 else 1.0
    return DelayEstimate(lag, confidence)


def align(x: AudioClip, est: DelayEstimate | int) -> AudioClip:
    delay = est.delay if isinstance(est, DelayEstimate) else int(est)
    out = np.zeros(len(x), dtype=np.float32)
    if delay < len(x):
        out[delay:] = x.samples[: len(x) - delay]
    return x.with_samples(out)
