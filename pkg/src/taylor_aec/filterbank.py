"""Cosine-modulated pseudo-QMF analysis/synthesis bank."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy import signal as sps

from taylor_aec.signal import AudioClip


@dataclass(frozen=True)
class PqmfBank:
    num_bands: int
    prototype: np.ndarray
    analysis: np.ndarray    # (M, L)
    synthesis: np.ndarray   # (M, L)
    cutoff: float
    beta: float

    @property
    def taps(self) -> int:
        return self.prototype.shape[0]

    @property
    def delay(self) -> int:
        return self.taps - 1

    def export(self, path) -> None:
        Path(path).write_text("\n".join(repr(float(t)) for t in self.prototype) + "\n")


@dataclass(frozen=True)
class SubbandSignal:
    bands: np.ndarray       # (M, ceil(N / M))
    source_length: int
    sample_rate: int

    @property
    def num_bands(self) -> int:
        return self.bands.shape[0]


def _modulate(prototype: np.ndarray, m: int):
    taps = prototype.shape[0]
    n = np.arange(taps)
    scale = 2.0 * math.sqrt(m)
    analysis = np.empty((m, taps))
    synthesis = np.empty((m, taps))
    for k in range(m):
        arg = (2 * k + 1) * (math.pi / (2 * m)) * (n - (taps - 1) / 2)
        phase = (-1) ** k * math.pi / 4
        analysis[k] = scale * prototype * np.cos(arg + phase)
        synthesis[k] = scale * prototype * np.cos(arg - phase)
    return analysis, synthesis


def _kaiser_prototype(taps: int, cutoff: float, beta: float) -> np.ndarray:
    # cutoff as a fraction of Nyquist
    return sps.firwin(taps, cutoff, window=("kaiser", beta), scale=True)


def _distortion_db(analysis: np.ndarray, synthesis: np.ndarray, n_freq: int = 2048) -> np.ndarray:
    """Overall (alias-free part) transfer magnitude of the bank in dB."""
    m = analysis.shape[0]
    total = np.zeros(2 * analysis.shape[1] - 1)
    for k in range(m):
        total += np.convolve(analysis[k], synthesis[k])
    total /= m
    _, resp = sps.freqz(total, worN=n_freq)
    return 20 * np.log10(np.abs(resp) + 1e-300)


def pqmf_design(num_bands: int = 4, taps: int = 64, stopband_attenuation_db: float = 60.0) -> PqmfBank:
    """Kaiser prototype whose cutoff minimises the bank's amplitude ripple."""
    if num_bands < 1 or taps < 1 or taps % num_bands:
        raise ValueError(f"taps ({taps}) must be a positive multiple of num_bands ({num_bands})")
    if num_bands == 1:
        # single band: pure delay, split between analysis (0) and synthesis (L-1)
        proto = np.zeros(taps)
        proto[0] = 1.0
        syn = np.zeros((1, taps))
        syn[0, -1] = 1.0
        return PqmfBank(1, proto, proto[None].copy(), syn, 1.0, 0.0)

    # transition band of a pseudo-QMF prototype is about pi / (2M)
    needed, beta = sps.kaiserord(stopband_attenuation_db, 1.0 / (2 * num_bands))
    if needed > taps:
        raise ValueError(
            f"{stopband_attenuation_db} dB stopband needs about {needed} taps, bank has {taps}"
        )

    def ripple(cutoff):
        a, s = _modulate(_kaiser_prototype(taps, cutoff, beta), num_bands)
        return float(np.max(np.abs(_distortion_db(a, s, 1024))))

    nominal = 1.0 / (2 * num_bands)
    res = optimize.minimize_scalar(ripple, bounds=(0.5 * nominal, 1.5 * nominal), method="bounded",
                                   options={"xatol": 1e-7})
    proto = _kaiser_prototype(taps, res.x, beta)
    proto = 0.5 * (proto + proto[::-1])
    analysis, synthesis = _modulate(proto, num_bands)
    return PqmfBank(num_bands, proto, analysis, synthesis, float(res.x), float(beta))


def pqmf_analyze(bank: PqmfBank, clip: AudioClip) -> SubbandSignal:
    x = clip.samples.astype(np.float64)
    m = bank.num_bands
    n_out = -(-len(x) // m)
    bands = np.stack([sps.upfirdn(h, x, down=m)[:n_out] for h in bank.analysis])
    return SubbandSignal(bands, len(x), clip.sample_rate)


def pqmf_synthesize(bank: PqmfBank, sub: SubbandSignal) -> AudioClip:
    """Recombine bands; output is the source delayed by ``bank.delay`` samples."""
    if sub.num_bands != bank.num_bands:
        raise ValueError(f"bank has {bank.num_bands} bands, signal has {sub.num_bands}")
    m = bank.num_bands
    n = sub.source_length
    out = np.zeros(n)
    for k in range(m):
        y = sps.upfirdn(bank.synthesis[k], sub.bands[k], up=m)[:n]
        out[: y.shape[0]] += y
    return AudioClip(out.astype(np.float32), sub.sample_rate)
