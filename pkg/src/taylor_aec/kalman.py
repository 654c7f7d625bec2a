"""Partitioned-block frequency-domain Kalman filter (PBFDKF).

Overlap-save with ``fft_size = 2 * block_shift``. Each partition holds a
``block_shift``-tap slice of the echo path and carries its own diagonal state
error variance per frequency bin, so idle partitions (beyond the echo tail)
stop absorbing adaptation gain.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from taylor_aec.signal import AudioClip


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PbfdkfConfig:
    block_shift: int = 1024
    partitions: int = 10
    transition: float = 0.999
    reg: float = 1e-10
    p_init: float = 1.0
    noise_smoothing: float = 0.98

    def __post_init__(self):
        if self.block_shift < 1:
            raise ValueError("block_shift must be >= 1")
        if self.partitions < 1:
            raise ValueError("partitions must be >= 1")
        if not 0 < self.transition < 1:
            raise ValueError(f"transition factor must lie in (0, 1), got {self.transition}")
        if not 0 <= self.noise_smoothing < 1:
            raise ValueError("noise_smoothing must lie in [0, 1)")

    @property
    def fft_size(self) -> int:
        return 2 * self.block_shift

    @property
    def num_bins(self) -> int:
        return self.block_shift + 1

    @property
    def span(self) -> int:
        return self.block_shift * self.partitions


@dataclass
class PbfdkfState:
    cfg: PbfdkfConfig
    weights: np.ndarray       # (P, K) complex
    p_state: np.ndarray       # (P, K)
    x_spectra: np.ndarray     # (P, K) complex, newest first
    x_time: np.ndarray        # (2B,) last two far-end blocks
    psi_v: np.ndarray         # (K,)
    psi_delta: np.ndarray     # (P, K)


def pbfdkf_new(cfg: PbfdkfConfig | None = None) -> PbfdkfState:
    cfg = cfg or PbfdkfConfig()
    p, k = cfg.partitions, cfg.num_bins
    return PbfdkfState(
        cfg=cfg,
        weights=np.zeros((p, k), np.complex128),
        p_state=np.full((p, k), cfg.p_init),
        x_spectra=np.zeros((p, k), np.complex128),
        x_time=np.zeros(cfg.fft_size),
        psi_v=np.zeros(k),
        psi_delta=np.zeros((p, k)),
    )


def _check_finite(state: PbfdkfState) -> None:
    for name in ("weights", "p_state", "psi_v", "psi_delta"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise DivergenceError(f"diverged: non-finite {name}")


def pbfdkf_block(state: PbfdkfState, x_block, d_block, adapt: bool = True):
    """Filter one block in place; returns (error, echo_estimate) for the block."""
    cfg = state.cfg
    b = cfg.block_shift
    x_block = np.asarray(x_block, dtype=np.float64)
    d_block = np.asarray(d_block, dtype=np.float64)
    if x_block.shape != (b,) or d_block.shape != (b,):
        raise ValueError(f"blocks must have exactly {b} samples, got {x_block.shape} and {d_block.shape}")
    if not (np.all(np.isfinite(x_block)) and np.all(np.isfinite(d_block))):
        raise ValueError("non-finite input samples")

    state.x_time[:b] = state.x_time[b:]
    state.x_time[b:] = x_block
    state.x_spectra[1:] = state.x_spectra[:-1]
    state.x_spectra[0] = np.fft.rfft(state.x_time)

    y = np.fft.irfft(np.sum(state.weights * state.x_spectra, axis=0), cfg.fft_size)[b:]
    e = d_block - y
    if not adapt:
        return e, y

    err_spec = np.fft.rfft(np.concatenate([np.zeros(b), e]))
    a = cfg.transition
    x_power = np.abs(state.x_spectra) ** 2
    state.psi_v = cfg.noise_smoothing * state.psi_v + (1 - cfg.noise_smoothing) * np.abs(err_spec) ** 2
    # observation noise is shared out over the partitions
    innovation = np.sum(state.p_state * x_power, axis=0) + 2.0 * state.psi_v / cfg.partitions
    mu = state.p_state / (innovation + cfg.reg)
    grad = mu * np.conj(state.x_spectra) * err_spec
    # keep each partition a causal B-tap filter
    g_time = np.fft.irfft(grad, cfg.fft_size, axis=-1)
    g_time[:, b:] = 0.0
    state.weights = a * (state.weights + np.fft.rfft(g_time, axis=-1))
    state.psi_delta = (1 - a * a) * np.abs(state.weights) ** 2
    state.p_state = a * a * (1 - 0.5 * mu * x_power) * state.p_state + state.psi_delta
    _check_finite(state)
    return e, y


def pbfdkf_run(cfg: PbfdkfConfig | None, x: AudioClip, d: AudioClip, adapt: bool = True,
               state: PbfdkfState | None = None):
    """Stream x and d through the filter; returns (e, y) clips of the input length."""
    if len(x) != len(d) or x.sample_rate != d.sample_rate:
        raise ValueError(f"x and d must match in length and rate ({len(x)}@{x.sample_rate} vs {len(d)}@{d.sample_rate})")
    state = state or pbfdkf_new(cfg)
    b = state.cfg.block_shift
    n = len(x)
    n_blocks = -(-n // b)
    xs = np.zeros(n_blocks * b)
    ds = np.zeros(n_blocks * b)
    xs[:n] = x.samples
    ds[:n] = d.samples
    e = np.empty_like(ds)
    y = np.empty_like(ds)
    for i in range(n_blocks):
        sl = slice(i * b, (i + 1) * b)
        e[sl], y[sl] = pbfdkf_block(state, xs[sl], ds[sl], adapt=adapt)
    return d.with_samples(e[:n]), d.with_samples(y[:n])


def save_snapshot(state: PbfdkfState, path) -> None:
    """u64 array count, then per array: u64 rank, u64 dims, float32 payload.

    Complex arrays gain a trailing dimension of 2 (re, im).
    """
    arrays = [state.weights, state.p_state, state.psi_v, state.psi_delta]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(arrays)))
        for arr in arrays:
            if np.iscomplexobj(arr):
                arr = np.stack([arr.real, arr.imag], axis=-1)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def load_snapshot(path) -> list:
    raw = memoryview(open(path, "rb").read())
    (count,), pos = struct.unpack_from("<Q", raw, 0), 8
    out = []
    for _ in range(count):
        (rank,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        shape = struct.unpack_from(f"<{rank}Q", raw, pos)
        pos += 8 * rank
        size = int(np.prod(shape)) * 4
        out.append(np.frombuffer(raw[pos:pos + size], dtype="<f4").reshape(shape))
        pos += size
    return out
