"""
Spectra and subbands
====================

The 20 ms / 10 ms STFT reconstructs its input, and the 4-band PQMF splits a
48 kHz signal into 12 kHz subbands that add back up to a delayed copy.
"""

import numpy as np

from taylor_aec.filterbank import pqmf_analyze, pqmf_design, pqmf_synthesize
from taylor_aec.signal import AudioClip, StftConfig, istft, stft

rng = np.random.default_rng(0)
x = AudioClip(rng.uniform(-0.5, 0.5, 48000))

# %% STFT round trip
cfg = StftConfig()
spec = stft(x, cfg)
y = istft(spec).samples
inner = slice(cfg.hop, len(y) - cfg.hop)
print(f"STFT: {spec.num_frames} frames x {cfg.num_bins} bins, "
      f"round-trip max error {np.max(np.abs(y[inner] - x.samples[inner])):.2e}")

# %% PQMF analysis / synthesis
bank = pqmf_design()
sub = pqmf_analyze(bank, x)
back = pqmf_synthesize(bank, sub).samples.astype(np.float64)
ref = x.samples[: len(x) - bank.delay].astype(np.float64)
snr = 10 * np.log10(np.sum(ref**2) / np.sum((ref - back[bank.delay:]) ** 2))
print(f"PQMF: {sub.num_bands} bands at {x.sample_rate // sub.num_bands} Hz, {bank.taps} taps, "
      f"delay {bank.delay} samples, round-trip SNR {snr:.1f} dB")

# %% where a 3 kHz tone lands
n = np.arange(48000)
tone = pqmf_analyze(bank, AudioClip(0.5 * np.sin(2 * np.pi * 3000 * n / 48000)))
energy = np.sum(tone.bands.astype(np.float64) ** 2, axis=1)
print("3 kHz tone band energy share:", np.round(energy / energy.sum(), 4))
