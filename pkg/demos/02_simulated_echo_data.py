"""
Simulated echo data
===================

An image-method room gives the echo path; a mixture combines near-end speech,
echo and noise at a chosen signal-to-echo and signal-to-noise ratio.
"""

import tempfile
from pathlib import Path

import numpy as np

from taylor_aec.simulate import MixtureSpec, RoomSpec, convolve_echo, image_method_rir, mix, pink_noise, speech_like, synth_dataset
from taylor_aec.signal import AudioClip

FS = 48000
rng = np.random.default_rng(3)

# %% a shoebox room
room = RoomSpec((5.0, 4.0, 3.0), (1.0, 1.5, 1.2), (3.5, 2.0, 1.4), 0.4, 6, FS)
rir = image_method_rir(room)
print(f"RIR: {len(rir.taps)} taps, direct path at sample {np.argmax(np.abs(rir.taps))}")

# %% near end, far end through the room, noise
near = AudioClip(speech_like(2.0, FS, rng))
far = AudioClip(speech_like(2.0, FS, rng))
echo = convolve_echo(far, rir, bulk_delay=960)
noise = AudioClip(pink_noise(2.0, FS, rng))
m = mix(near, echo, noise, MixtureSpec(0.0, 30.0))
print(f"scenario {m.spec.scenario}, echo scale {m.meta['echo_scale']:.3f}, "
      f"near-end active in {m.vad.mean():.0%} of frames")

# %% a manifest turns into a directory of items
with tempfile.TemporaryDirectory() as tmp:
    manifest = Path(tmp) / "manifest.txt"
    manifest.write_text("id=dt seed=1 duration=1.0\nid=fe seed=2 duration=1.0 scenario=ST-FE\n")
    print(synth_dataset(manifest, Path(tmp) / "data"))
    print(sorted(p.name for p in (Path(tmp) / "data" / "dt").iterdir()))
