"""
Overfitting one item
====================

A sanity check for the whole training path: fit the post-filter to a single
far-end-only second and compare ERLE with and without it.
Pass a step count on the command line (default 100; 500 takes a few minutes).
"""

import sys
import tempfile
import time
from pathlib import Path

from taylor_aec.losses import LossConfig
from taylor_aec.metrics import erle
from taylor_aec.model import NetConfig
from taylor_aec.signal import AudioClip
from taylor_aec.simulate import make_item, write_item
from taylor_aec.train import TrainConfig, Trainer, prepare_item

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100

with tempfile.TemporaryDirectory() as tmp:
    write_item(make_item({"id": "one", "seed": "7", "scenario": "ST-FE", "snr": "30", "delay": "480",
                          "duration": "1.0"}), Path(tmp) / "one")
    item = prepare_item(Path(tmp) / "one")

print(f"Kalman only: ERLE {erle(item.d, item.e):.1f} dB")
trainer = Trainer(NetConfig(), LossConfig(), TrainConfig(warmup=50, max_steps=steps, epochs=10**6))
print(f"post-filter: {trainer.model.param_count():,d} parameters")
t0 = time.perf_counter()
history = trainer.fit([item], log_every=10**9)
for rec in history[:: max(1, steps // 10)] + history[-1:]:
    print(f"step {rec['step']:4d}  lr {rec['lr']:.2e}  total {rec['total']:.4f}")
out, _ = trainer.model.enhance(AudioClip(item.d), AudioClip(item.e), AudioClip(item.x))
print(f"{steps} steps in {time.perf_counter() - t0:.0f} s; Kalman + post-filter ERLE {erle(item.d, out):.1f} dB")
