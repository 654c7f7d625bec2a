"""
Network anatomy
===============

The post-filter predicts a real magnitude (zero-order term) carrying the phase
of the microphone spectrum, plus a complex residual (first-order term).
"""

import torch

from taylor_aec.model import NetConfig, PostFilter, taylor_combine

# %% parameter budget and the two ablation toggles
for name, cfg in (("full", NetConfig()),
                  ("no gated PE", NetConfig(gated_pe=False)),
                  ("no TFCM, no gated PE", NetConfig(use_tfcm=False, gated_pe=False))):
    print(f"{name:22s} {PostFilter(cfg).param_count():>9,d} parameters")

# %% one forward pass on a second of noise
pf = PostFilter(NetConfig()).eval()
d, e, x = (torch.randn(1, 48000) * 0.1 for _ in range(3))
with torch.no_grad():
    s_hat, out = pf(d, e, x)
print("enhanced waveform", tuple(s_hat.shape))
print("zero-order magnitude", tuple(out.zero_order_mag.shape), "VAD", tuple(out.vad_prob.shape))

# %% with no residual and the oracle magnitude, the combination returns the target
s = torch.randn(2, 1, 4, 5, 129, dtype=torch.float64)
gain = torch.rand(1, 4, 5, 129, dtype=torch.float64) + 0.5
zero = torch.zeros_like(gain)
re, im = taylor_combine(torch.sqrt(s[0] ** 2 + s[1] ** 2), s[0] * gain, s[1] * gain, (zero, zero))
print("max |enhanced - S|:", float(torch.max(torch.abs(re - s[0]) + torch.abs(im - s[1]))))
