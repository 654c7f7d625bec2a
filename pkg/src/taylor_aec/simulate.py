"""Synthetic echo data: image-method RIRs, echo-path convolution and mixing."""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from taylor_aec.config import format_kv, parse_kv_line
from taylor_aec.signal import AudioClip, StftConfig, read_wav, write_wav

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple
    source: tuple
    mic: tuple
    absorption: float = 0.5
    max_order: int = 6
    sample_rate: int = 48000

    def __post_init__(self):
        if len(self.dimensions) != 3 or any(d <= 0 for d in self.dimensions):
            raise ValueError(f"degenerate room dimensions {self.dimensions}")
        for name, pos in (("source", self.source), ("mic", self.mic)):
            if len(pos) != 3 or not all(0 < p < d for p, d in zip(pos, self.dimensions)):
                raise ValueError(f"{name} position {pos} not strictly inside room {self.dimensions}")
        if not 0 < self.absorption <= 1:
            raise ValueError(f"absorption must lie in (0, 1], got {self.absorption}")
        if self.max_order < 0:
            raise ValueError(f"max_order must be >= 0, got {self.max_order}")
        if np.allclose(self.source, self.mic):
            raise ValueError("source and mic coincide")


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int = 48000

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or not np.all(np.isfinite(taps)) or not np.any(taps):
            raise ValueError("RIR needs finite taps with at least one nonzero value")
        object.__setattr__(self, "taps", taps)


def image_sources(room: RoomSpec):
    """Yield (distance, reflection_count) for every image up to room.max_order."""
    src = np.asarray(room.source, dtype=np.float64)
    mic = np.asarray(room.mic, dtype=np.float64)
    dims = np.asarray(room.dimensions, dtype=np.float64)
    n_max = room.max_order // 2 + 1
    rng = range(-n_max, n_max + 1)
    for n in itertools.product(rng, rng, rng):
        n = np.asarray(n)
        for parity in itertools.product((0, 1), repeat=3):
            q = np.asarray(parity)
            order = int(np.sum(np.abs(2 * n - q)))
            if order > room.max_order:
                continue
            image = (1 - 2 * q) * src + 2 * n * dims
            yield float(np.linalg.norm(image - mic)), order


def image_method_rir(room: RoomSpec) -> Rir:
    """Shoebox RIR: each image contributes (1 - a)^order / r at round(r fs / c)."""
    refl = 1.0 - room.absorption
    arrivals = []
    for dist, order in image_sources(room):
        amp = refl**order / dist
        if amp == 0.0:
            continue
        arrivals.append((int(round(dist * room.sample_rate / SPEED_OF_SOUND)), amp))
    length = max(delay for delay, _ in arrivals) + 1
    taps = np.zeros(length)
    for delay, amp in arrivals:
        taps[delay] += amp
    return Rir(taps, room.sample_rate)


def convolve_echo(x: AudioClip, h: Rir, bulk_delay: int = 0) -> AudioClip:
    if x.sample_rate != h.sample_rate:
        raise ValueError(f"sample rate mismatch: signal {x.sample_rate} Hz vs RIR {h.sample_rate} Hz")
    if bulk_delay < 0:
        raise ValueError("bulk_delay must be non-negative")
    n = len(x)
    delayed = np.zeros(n)
    if bulk_delay < n:
        delayed[bulk_delay:] = x.samples[: n - bulk_delay]
    out = sps.fftconvolve(delayed, h.taps)[:n]
    return x.with_samples(out)


@dataclass(frozen=True)
class MixtureSpec:
    """Target ratios for one mixture.

    ``ser_db = -inf`` gives far-end single talk (near-end removed, echo kept at
    native level, noise referenced to the echo); ``ser_db = +inf`` gives
    near-end single talk (echo removed). ``snr_db = +inf`` drops the noise.
    """

    ser_db: float = 0.0
    snr_db: float = 30.0
    echo_delay: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.echo_delay < 0:
            raise ValueError("echo_delay must be >= 0")

    @property
    def scenario(self) -> str:
        if self.ser_db == -math.inf:
            return "ST-FE"
        if self.ser_db == math.inf:
            return "ST-NE"
        return "DT"


@dataclass(frozen=True)
class LabeledMixture:
    d: AudioClip
    x: AudioClip
    s: AudioClip
    echo: AudioClip
    noise: AudioClip
    vad: np.ndarray
    spec: MixtureSpec
    meta: dict = field(default_factory=dict)


def _energy(x) -> float:
    return float(np.mean(np.asarray(x, dtype=np.float64) ** 2))


def _scale_for(ref_energy: float, sig_energy: float, ratio_db: float, what: str) -> float:
    if ratio_db == math.inf:
        return 0.0
    if sig_energy == 0.0:
        raise ValueError(f"{what} has zero energy but a finite target ratio {ratio_db} dB")
    return math.sqrt(ref_energy / (sig_energy * 10 ** (ratio_db / 10)))


def mix(s: AudioClip, echo: AudioClip, noise: AudioClip, spec: MixtureSpec,
        x: AudioClip | None = None, vad_cfg: StftConfig | None = None) -> LabeledMixture:
    """Scale echo and noise to the requested SER/SNR and sum them with s."""
    if not len(s) == len(echo) == len(noise):
        raise ValueError(f"length mismatch: s={len(s)}, echo={len(echo)}, noise={len(noise)}")
    if not s.sample_rate == echo.sample_rate == noise.sample_rate:
        raise ValueError("sample rate mismatch between s, echo and noise")
    s64 = s.samples.astype(np.float64)
    e64 = echo.samples.astype(np.float64)
    n64 = noise.samples.astype(np.float64)

    if spec.ser_db == -math.inf:
        near_scale, echo_scale = 0.0, 1.0
        if _energy(e64) == 0.0:
            raise ValueError("far-end single talk needs a nonzero echo")
        ref = _energy(e64)
    else:
        near_scale = 1.0
        ref = _energy(s64)
        if ref == 0.0 and spec.ser_db != math.inf:
            raise ValueError("near-end speech has zero energy with a finite SER")
        echo_scale = _scale_for(ref, _energy(e64), spec.ser_db, "echo")
    if ref == 0.0:
        noise_scale = 0.0 if spec.snr_db == math.inf else 1.0
    else:
        noise_scale = _scale_for(ref, _energy(n64), spec.snr_db, "noise")

    s_out = near_scale * s64
    e_out = echo_scale * e64
    n_out = noise_scale * n64
    d = s_out + e_out + n_out
    cfg = vad_cfg or StftConfig.for_rate(s.sample_rate)
    rate = s.sample_rate
    meta = {
        "scenario": spec.scenario,
        "near_scale": near_scale,
        "echo_scale": echo_scale,
        "noise_scale": noise_scale,
        "echo_delay": spec.echo_delay,
        "seed": spec.seed,
    }
    vad = energy_vad(AudioClip(s_out.astype(np.float32), rate), cfg)
    if len(vad) != cfg.num_frames(len(d)):
        raise AssertionError("vad length does not match frame count")
    x = x if x is not None else AudioClip(np.zeros(len(s), np.float32), rate)
    return LabeledMixture(
        d=AudioClip(d.astype(np.float32), rate),
        x=x,
        s=AudioClip(s_out.astype(np.float32), rate),
        echo=AudioClip(e_out.astype(np.float32), rate),
        noise=AudioClip(n_out.astype(np.float32), rate),
        vad=vad,
        spec=spec,
        meta=meta,
    )


def frame_rms(clip: AudioClip, cfg: StftConfig) -> np.ndarray:
    x = clip.samples.astype(np.float64)
    if len(x) < cfg.window_len:
        return np.zeros(0)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)[:: cfg.hop]
    return np.sqrt(np.mean(frames**2, axis=-1))


def energy_vad(s: AudioClip, cfg: StftConfig | None = None, threshold_db: float = 40.0) -> np.ndarray:
    """Label frames whose RMS is within threshold_db of the loudest frame."""
    cfg = cfg or StftConfig.for_rate(s.sample_rate)
    rms = frame_rms(s, cfg)
    labels = np.zeros(rms.shape[0], dtype=np.int8)
    peak = rms.max(initial=0.0)
    if peak == 0.0:
        return labels
    floor = peak * 10 ** (-threshold_db / 20)
    labels[rms > floor] = 1
    return labels


# -- built-in source material -------------------------------------------------

def speech_like(duration: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Formant-filtered noise with a syllabic on/off envelope."""
    n = int(round(duration * sample_rate))
    excitation = rng.standard_normal(n)
    out = np.zeros(n)
    for _ in range(3):
        fc = rng.uniform(300.0, min(4000.0, 0.4 * sample_rate))
        bw = rng.uniform(80.0, 400.0)
        r = math.exp(-math.pi * bw / sample_rate)
        theta = 2 * math.pi * fc / sample_rate
        a = [1.0, -2 * r * math.cos(theta), r * r]
        out += sps.lfilter([1.0 - r], a, excitation)
    # tilt toward low frequencies like voiced speech
    out = sps.lfilter([1.0], [1.0, -0.9], out)
    t = np.arange(n) / sample_rate
    syllable = 0.5 * (1 - np.cos(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi)))
    gate = np.zeros(n)
    pos = 0
    while pos < n:
        on = int(rng.uniform(0.2, 0.8) * sample_rate)
        off = int(rng.uniform(0.05, 0.3) * sample_rate)
        gate[pos:pos + on] = 1.0
        pos += on + off
    gate = sps.lfilter([0.01], [1.0, -0.99], gate)
    out *= syllable * gate
    peak = np.max(np.abs(out))
    return out / peak * 0.5 if peak > 0 else out


def pink_noise(duration: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    n = int(round(duration * sample_rate))
    white = rng.standard_normal(n)
    # Kellet's economy pink filter
    b = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
    a = [1, -2.494956002, 2.017265875, -0.522189400]
    pink = sps.lfilter(b, a, white)
    return pink / (np.std(pink) + 1e-12) * 0.1


# -- manifest driven dataset --------------------------------------------------

ITEM_DEFAULTS = {
    "duration": "1.0",
    "scenario": "DT",
    "ser": "-10,10",
    "snr": "20,40",
    "delay": "0,2400",
    "room_x": "3,8",
    "room_y": "3,8",
    "room_z": "2.5,4",
    "alpha": "0.3,0.9",
    "order": "6",
    "rate": "48000",
    "seed": "0",
}


def _draw(value: str, rng: np.random.Generator) -> float:
    parts = [float(p) for p in str(value).split(",")]
    if len(parts) == 1:
        return parts[0]
    lo, hi = parts
    return float(rng.uniform(lo, hi))


def _load_or_generate(path: str | None, duration: float, rate: int, rng, generator) -> np.ndarray:
    n = int(round(duration * rate))
    if not path:
        return generator(duration, rate, rng)
    clip = read_wav(path)
    if clip.sample_rate != rate:
        raise ValueError(f"{path}: rate {clip.sample_rate} Hz, item wants {rate} Hz")
    data = clip.samples.astype(np.float64)
    if len(data) < n:
        data = np.pad(data, (0, n - len(data)))
    return data[:n]


def random_room(rng: np.random.Generator, item: dict, rate: int) -> RoomSpec:
    dims = tuple(_draw(item[k], rng) for k in ("room_x", "room_y", "room_z"))
    margin = 0.3

    def inside():
        return tuple(float(rng.uniform(margin, d - margin)) for d in dims)

    src = inside()
    mic = inside()
    while np.linalg.norm(np.subtract(src, mic)) < 0.2:
        mic = inside()
    return RoomSpec(dims, src, mic, _draw(item["alpha"], rng), int(_draw(item["order"], rng)), rate)


def make_item(item: dict) -> LabeledMixture:
    """Build one mixture from a manifest record (defaults filled in)."""
    item = {**ITEM_DEFAULTS, **item}
    rng = np.random.default_rng(int(item["seed"]))
    rate = int(float(item["rate"]))
    duration = float(item["duration"])
    near = _load_or_generate(item.get("near"), duration, rate, rng, speech_like)
    far = _load_or_generate(item.get("far"), duration, rate, rng, speech_like)
    noise = _load_or_generate(item.get("noise"), duration, rate, rng, pink_noise)
    room = random_room(rng, item, rate)
    rir = image_method_rir(room)
    delay = int(round(_draw(item["delay"], rng)))
    scenario = item["scenario"].upper()
    if scenario == "ST-FE":
        ser = -math.inf
    elif scenario == "ST-NE":
        ser = math.inf
    elif scenario == "DT":
        ser = _draw(item["ser"], rng)
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    snr = _draw(item["snr"], rng)
    spec = MixtureSpec(ser, snr, delay, int(item["seed"]))
    if scenario == "ST-NE":
        far = np.zeros_like(far)  # far end silent
    x = AudioClip(far.astype(np.float32), rate)
    echo = convolve_echo(x, rir, delay)
    m = mix(AudioClip(near.astype(np.float32), rate), echo, AudioClip(noise.astype(np.float32), rate), spec, x=x)
    m.meta.update({
        "id": item.get("id", ""),
        "ser_db": ser,
        "snr_db": snr,
        "room": ",".join(f"{v:.4f}" for v in room.dimensions),
        "source": ",".join(f"{v:.4f}" for v in room.source),
        "mic": ",".join(f"{v:.4f}" for v in room.mic),
        "absorption": room.absorption,
        "max_order": room.max_order,
        "rir_taps": len(rir.taps),
    })
    return m


def write_item(m: LabeledMixture, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("d", "x", "s", "echo", "noise"):
        write_wav(out / f"{name}.wav", getattr(m, name))
    np.savetxt(out / "vad.txt", m.vad, fmt="%d")
    (out / "meta.txt").write_text(format_kv(m.meta) + "\n")
    return out


def _synth_one(args):
    item, out_dir = args
    item_id = item.get("id")
    try:
        m = make_item(item)
        write_item(m, Path(out_dir) / item_id)
        return item_id, None
    except (OSError, ValueError) as exc:
        return item_id, str(exc)


def read_manifest(path) -> list:
    items = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        item = parse_kv_line(line)
        item.setdefault("id", f"item{lineno:04d}")
        items.append(item)
    return items


def synth_dataset(manifest_path, out_dir, jobs: int = 1) -> dict:
    """Write one directory of WAVs, labels and metadata per manifest record."""
    items = read_manifest(manifest_path)
    work = [(item, str(out_dir)) for item in items]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_synth_one, work))
    else:
        results = [_synth_one(w) for w in work]
    errors = {item_id: err for item_id, err in results if err}
    for item_id, err in errors.items():
        log.warning("item %s failed: %s", item_id, err)
    return {"items": len(items), "written": len(items) - len(errors), "errors": errors}
