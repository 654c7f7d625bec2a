"""Audio containers, WAV I/O and the STFT/iSTFT pair."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 48000


@dataclass(frozen=True)
class AudioClip:
    """Mono float32 signal with its sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError(f"AudioClip expects 1-D samples, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


def sqrt_hann(n: int) -> np.ndarray:
    """Periodic square-root Hann window."""
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 960
    hop: int = 480
    fft_size: int = 1024
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.window is None:
            object.__setattr__(self, "window", sqrt_hann(self.window_len))
        window = np.asarray(self.window, dtype=np.float64)
        if window.shape != (self.window_len,):
            raise ValueError(f"window has {window.shape[0]} taps, expected {self.window_len}")
        if not 0 < self.hop <= self.window_len <= self.fft_size:
            raise ValueError(
                f"need 0 < hop <= window_len <= fft_size, got {self.hop}, {self.window_len}, {self.fft_size}"
            )
        window.setflags(write=False)
        object.__setattr__(self, "window", window)
        env = self._overlap_envelope()
        if not np.allclose(env, env.mean(), rtol=1e-9, atol=1e-12):
            raise ValueError("window is not constant-overlap-add at this hop")

    def _overlap_envelope(self) -> np.ndarray:
        # steady-state sum of analysis * synthesis windows over one hop period
        w2 = self.window**2
        env = np.zeros(self.hop)
        for start in range(0, self.window_len, self.hop):
            seg = w2[start:start + self.hop]
            env[: seg.shape[0]] += seg
        return env

    @property
    def cola_gain(self) -> float:
        return float(self._overlap_envelope().mean())

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @classmethod
    def for_rate(cls, sample_rate: int, window_ms: float = 20.0, hop_ms: float = 10.0) -> "StftConfig":
        window_len = int(round(sample_rate * window_ms / 1000))
        hop = int(round(sample_rate * hop_ms / 1000))
        return cls(window_len, hop, _next_pow2(window_len))

    def num_frames(self, length: int) -> int:
        if length < self.window_len:
            return 0
        return (length - self.window_len) // self.hop + 1

    def key(self) -> tuple:
        return (self.window_len, self.hop, self.fft_size, self.window.tobytes())


@dataclass(frozen=True)
class ComplexSpectrogram:
    """T x F complex STFT values (complex64) tagged with the config that made them."""

    data: np.ndarray
    cfg: StftConfig
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex64)
        if data.ndim != 2 or data.shape[1] != self.cfg.num_bins:
            raise ValueError(f"spectrogram shape {data.shape} does not match {self.cfg.num_bins} bins")
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]


def stft(clip: AudioClip, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.shape[0] < cfg.window_len:
        raise ValueError(f"input too short: {x.shape[0]} samples < window of {cfg.window_len}")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)[:: cfg.hop]
    spec = np.fft.rfft(frames * cfg.window, n=cfg.fft_size, axis=-1)
    return ComplexSpectrogram(spec, cfg, clip.sample_rate)


def istft(spec: ComplexSpectrogram, cfg: StftConfig | None = None) -> AudioClip:
    """Weighted overlap-add inverse; interior samples are exact for COLA windows."""
    cfg = cfg or spec.cfg
    if cfg.key() != spec.cfg.key():
        raise ValueError("StftConfig does not match the one that produced the spectrogram")
    n_frames = spec.num_frames
    frames = np.fft.irfft(spec.data.astype(np.complex128), n=cfg.fft_size, axis=-1)[:, : cfg.window_len]
    frames *= cfg.window
    out = np.zeros(max(n_frames - 1, 0) * cfg.hop + cfg.window_len)
    for t in range(n_frames):
        out[t * cfg.hop: t * cfg.hop + cfg.window_len] += frames[t]
    out /= cfg.cola_gain
    return AudioClip(out.astype(np.float32), spec.sample_rate)


def read_wav(path) -> AudioClip:
    """Read PCM16 or float32 WAV; multi-channel files keep the first channel."""
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, struct.error, wavfile.WavFileWarning, EOFError) as exc:
        raise ValueError(f"{path}: malformed or truncated WAV ({exc})") from exc
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}; need PCM16 or float32")
    return AudioClip(samples, int(rate))


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    if encoding == "float32":
        data = clip.samples.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(clip.samples.astype(np.float64) * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown encoding {encoding!r}; use 'float32' or 'pcm16'")
    wavfile.write(Path(path), clip.sample_rate, data)


def dump_spectrogram(path, spec: ComplexSpectrogram) -> None:
    """Little-endian {T, F} u64 header followed by interleaved (re, im) float32."""
    t, f = spec.data.shape
    pairs = np.empty((t, f, 2), dtype="<f4")
    pairs[..., 0] = spec.data.real
    pairs[..., 1] = spec.data.imag
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", t, f))
        fh.write(pairs.tobytes())


def load_spectrogram(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ValueError(f"{path}: missing spectrogram header")
    t, f = struct.unpack("<QQ", raw[:16])
    expected = 16 + t * f * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {t}x{f}, found {len(raw)}")
    pairs = np.frombuffer(raw[16:], dtype="<f4").reshape(t, f, 2)
    return pairs[..., 0] + 1j * pairs[..., 1]
