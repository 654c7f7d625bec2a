"""TaylorAECNet post-filter.

Signals are split into PQMF subbands, each subband gets a 20 ms / 10 ms STFT,
and subbands ride on the channel axis. The network estimates a zero-order
magnitude (mask on |D|, phase of D) and a first-order complex residual:

    enhanced = zero_order_mag * exp(j * phase(D)) + first_order
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from taylor_aec.filterbank import pqmf_design
from taylor_aec.signal import AudioClip, StftConfig
from taylor_aec.tensor import CausalConv2d, CausalConvTranspose2d, ComplexConv2d, magnitude, param_count


@dataclass(frozen=True)
class NetConfig:
    subbands: int = 4
    sample_rate: int = 48000
    pqmf_taps: int = 64
    enc_channels: tuple = (16, 32, 48, 64)
    tfcm_layers: int = 6
    zom_stcm_layers: int = 1
    zom_stcm_hidden: int = 128
    fom_stcm_layers: int = 2
    fom_stcm_hidden: int = 64
    dprnn_blocks: int = 1
    dprnn_hidden: int = 64
    pe_channels: int = 16
    context_channels: int = 8
    vad_channels: int = 8
    vad_hidden: int = 32
    use_tfcm: bool = True
    gated_pe: bool = True
    scale_preset: str = "desk"

    def __post_init__(self):
        if self.scale_preset == "full":
            if self.tfcm_layers != 6:
                raise ValueError("full preset uses 6 TFCM layers")
            if (self.zom_stcm_layers, self.zom_stcm_hidden, self.fom_stcm_layers, self.fom_stcm_hidden) != (1, 128, 2, 64):
                raise ValueError("full preset fixes STCM sizes to ZOM 1x128 and FOM 2x64")
        elif self.scale_preset != "desk":
            raise ValueError(f"unknown scale_preset {self.scale_preset!r}")
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))

    @classmethod
    def full(cls, **overrides) -> "NetConfig":
        # unstated widths chosen to land near 19M parameters (18.94M)
        base = dict(enc_channels=(128, 256, 384, 512), dprnn_hidden=512, pe_channels=64,
                    context_channels=16, vad_hidden=128, scale_preset="full")
        return cls(**{**base, **overrides})

    @classmethod
    def from_flat(cls, record: dict) -> "NetConfig":
        preset = record.get("scale_preset", "desk")
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, value in record.items():
            if key not in types:
                continue
            if key == "enc_channels":
                kwargs[key] = tuple(int(v) for v in str(value).split(","))
            elif key in ("use_tfcm", "gated_pe"):
                kwargs[key] = str(value).lower() in ("1", "true", "yes", "on")
            elif key == "scale_preset":
                kwargs[key] = value
            else:
                kwargs[key] = int(value)
        return cls.full(**kwargs) if preset == "full" else cls(**kwargs)

    def to_flat(self) -> dict:
        out = asdict(self)
        out["enc_channels"] = ",".join(str(c) for c in self.enc_channels)
        return out

    @property
    def subband_rate(self) -> int:
        return self.sample_rate // self.subbands

    @property
    def stft(self) -> StftConfig:
        return StftConfig.for_rate(self.subband_rate)

    @property
    def freq_bins(self) -> int:
        """Bins the network models; the Nyquist bin is carried outside it."""
        return self.stft.fft_size // 2


def check_freq_bins(freq_bins: int, stages: int) -> None:
    if freq_bins % (2**stages):
        raise ValueError(f"{freq_bins} frequency bins not divisible by total stride {2**stages}")


# -- building blocks ---------------------------------------------------------

class TFCM(nn.Module):
    """Stack of residual dilated depthwise units (time dilation 1, 2, 4, ...)."""

    def __init__(self, channels, layers=6, kernel=(3, 3)):
        super().__init__()
        self.units = nn.ModuleList()
        for i in range(layers):
            self.units.append(nn.Sequential(
                nn.Conv2d(channels, channels, 1),
                nn.PReLU(channels),
                CausalConv2d(channels, channels, kernel, dilation=(2**i, 1), groups=channels),
                nn.PReLU(channels),
                nn.Conv2d(channels, channels, 1),
            ))

    def forward(self, x):
        for unit in self.units:
            x = x + unit(x)
        return x


class CTBlock(nn.Module):
    def __init__(self, in_ch, out_ch, tfcm_layers, use_tfcm=True, transpose=False):
        super().__init__()
        if transpose:
            self.conv = CausalConvTranspose2d(in_ch, out_ch, (2, 3), (1, 2))
        else:
            self.conv = CausalConv2d(in_ch, out_ch, (2, 3), (1, 2))
        self.bn = nn.BatchNorm2d(out_ch)
        self.act = nn.LeakyReLU(0.01)
        self.tfcm = TFCM(out_ch, tfcm_layers) if use_tfcm else nn.Identity()

    def forward(self, x):
        return self.tfcm(self.act(self.bn(self.conv(x))))


class STCM(nn.Module):
    """Squeezed temporal convolution: 1x1 squeeze, gated dilated causal conv, 1x1 expand."""

    def __init__(self, channels, hidden, layers, kernel=3):
        super().__init__()
        self.layers = nn.ModuleList()
        for i in range(layers):
            self.layers.append(nn.ModuleDict({
                "squeeze": nn.Conv2d(channels, hidden, 1),
                "act_in": nn.PReLU(hidden),
                "main": CausalConv2d(hidden, hidden, (kernel, 1), dilation=(2**i, 1)),
                "gate": CausalConv2d(hidden, hidden, (kernel, 1), dilation=(2**i, 1)),
                "act_out": nn.PReLU(hidden),
                "expand": nn.Conv2d(hidden, channels, 1),
            }))

    def forward(self, x):
        for layer in self.layers:
            h = layer["act_in"](layer["squeeze"](x))
            h = layer["main"](h) * torch.sigmoid(layer["gate"](h))
            x = x + layer["expand"](layer["act_out"](h))
        return x


class DPRNN(nn.Module):
    """Intra pass: bidirectional GRU across frequency within a frame.
    Inter pass: causal GRU across frames for each frequency position."""

    def __init__(self, channels, hidden, blocks=1):
        super().__init__()
        self.blocks = nn.ModuleList()
        for _ in range(blocks):
            self.blocks.append(nn.ModuleDict({
                "intra": nn.GRU(channels, hidden // 2, batch_first=True, bidirectional=True),
                "intra_fc": nn.Linear(2 * (hidden // 2), channels),
                "intra_norm": nn.LayerNorm(channels),
                "inter": nn.GRU(channels, hidden, batch_first=True),
                "inter_fc": nn.Linear(hidden, channels),
                "inter_norm": nn.LayerNorm(channels),
            }))

    def forward(self, x):
        b, c, t, f = x.shape
        for blk in self.blocks:
            h = x.permute(0, 2, 3, 1).reshape(b * t, f, c)
            h = blk["intra_norm"](blk["intra_fc"](blk["intra"](h)[0]))
            x = x + h.reshape(b, t, f, c).permute(0, 3, 1, 2)
            h = x.permute(0, 3, 2, 1).reshape(b * f, t, c)
            h = blk["inter_norm"](blk["inter_fc"](blk["inter"](h)[0]))
            x = x + h.reshape(b, f, t, c).permute(0, 3, 2, 1)
        return x


# -- network modules ---------------------------------------------------------

class GatedPhaseEncoder(nn.Module):
    """Complex convs on D, E, X summed, gated by a sigmoid branch on their magnitudes,
    then a complex conv + modulus for the real-valued feature."""

    def __init__(self, subbands, channels):
        super().__init__()
        self.conv_d = ComplexConv2d(subbands, channels)
        self.conv_e = ComplexConv2d(subbands, channels)
        self.conv_x = ComplexConv2d(subbands, channels)
        self.gate = CausalConv2d(3 * subbands, channels, (2, 3))
        self.to_real = ComplexConv2d(channels, channels)

    def forward(self, d, e, x):
        for name, z in (("E", e), ("X", x)):
            if z[0].shape != d[0].shape:
                raise ValueError(f"shape mismatch: D {tuple(d[0].shape)} vs {name} {tuple(z[0].shape)}")
        parts = [conv(*z) for conv, z in ((self.conv_d, d), (self.conv_e, e), (self.conv_x, x))]
        re = parts[0][0] + parts[1][0] + parts[2][0]
        im = parts[0][1] + parts[1][1] + parts[2][1]
        mags = torch.cat([magnitude(*d), magnitude(*e), magnitude(*x)], dim=1)
        g = torch.sigmoid(self.gate(mags))
        re, im = re * g, im * g
        mag_feature = magnitude(*self.to_real(re, im))
        return mag_feature, (re, im)


class PlainModulus(nn.Module):
    """Ablation stand-in for the gated encoder: stacked |D|, |E|, |X|."""

    def forward(self, d, e, x):
        mag_feature = torch.cat([magnitude(*d), magnitude(*e), magnitude(*x)], dim=1)
        return mag_feature, (torch.cat([d[0], e[0], x[0]], 1), torch.cat([d[1], e[1], x[1]], 1))


class ZeroOrderModule(nn.Module):
    def __init__(self, in_ch, cfg: NetConfig):
        super().__init__()
        ch = cfg.enc_channels
        self.encoder = nn.ModuleList()
        prev = in_ch
        for c in ch:
            self.encoder.append(CTBlock(prev, c, cfg.tfcm_layers, cfg.use_tfcm))
            prev = c
        self.dprnn = DPRNN(ch[-1], cfg.dprnn_hidden, cfg.dprnn_blocks)
        self.stcm = STCM(ch[-1], cfg.zom_stcm_hidden, cfg.zom_stcm_layers)
        self.decoder = nn.ModuleList()
        outs = list(ch[:-1][::-1]) + [ch[0]]
        prev = ch[-1]
        for skip, out in zip(ch[::-1], outs):
            self.decoder.append(CTBlock(prev + skip, out, cfg.tfcm_layers, cfg.use_tfcm, transpose=True))
            prev = out
        self.head = nn.Conv2d(prev, cfg.subbands, 1)
        self.stages = len(ch)

    def forward(self, feature):
        check_freq_bins(feature.shape[-1], self.stages)
        skips = []
        x = feature
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        bottleneck = self.stcm(self.dprnn(x))
        x = bottleneck
        for block, skip in zip(self.decoder, reversed(skips)):
            x = block(torch.cat([x, skip], dim=1))
        mask = 2.0 * torch.sigmoid(self.head(x))
        return mask, bottleneck


class FirstOrderModule(nn.Module):
    def __init__(self, in_ch, cfg: NetConfig):
        super().__init__()
        self.context = nn.Conv2d(cfg.enc_channels[-1], cfg.context_channels, 1)
        self.upsample = 2 ** len(cfg.enc_channels)
        width = in_ch + cfg.context_channels
        self.stcm = STCM(width, cfg.fom_stcm_hidden, cfg.fom_stcm_layers)
        self.real_head = nn.Conv2d(width, cfg.subbands, 1)
        self.imag_head = nn.Conv2d(width, cfg.subbands, 1)

    def forward(self, complex_feature, bottleneck):
        re, im = complex_feature
        ctx = self.context(bottleneck).repeat_interleave(self.upsample, dim=-1)
        if ctx.shape[-1] != re.shape[-1] or ctx.shape[2] != re.shape[2]:
            raise ValueError(f"context {tuple(ctx.shape)} does not line up with feature {tuple(re.shape)}")
        h = self.stcm(torch.cat([re, im, ctx], dim=1))
        return self.real_head(h), self.imag_head(h)


class VadHead(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        bins = cfg.freq_bins // 2 ** len(cfg.enc_channels)
        self.conv = nn.Conv2d(cfg.enc_channels[-1], cfg.vad_channels, 1)
        self.act = nn.PReLU(cfg.vad_channels)
        self.gru = nn.GRU(cfg.vad_channels * bins, cfg.vad_hidden, batch_first=True)
        self.out = nn.Linear(cfg.vad_hidden, 1)

    def forward(self, bottleneck):
        h = self.act(self.conv(bottleneck))
        b, c, t, f = h.shape
        h = h.permute(0, 2, 1, 3).reshape(b, t, c * f)
        return torch.sigmoid(self.out(self.gru(h)[0])).squeeze(-1)


def taylor_combine(zero_order_mag, d_re, d_im, first_order):
    """zero_order_mag * exp(j phase(D)) + first_order, as a (re, im) pair."""
    phase = torch.atan2(d_im, d_re)
    return (zero_order_mag * torch.cos(phase) + first_order[0],
            zero_order_mag * torch.sin(phase) + first_order[1])


class NetOutput(NamedTuple):
    enhanced: tuple
    zero_order_mag: torch.Tensor
    first_order: tuple
    mask: torch.Tensor
    vad_prob: torch.Tensor


class TaylorAECNet(nn.Module):
    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or NetConfig()
        check_freq_bins(cfg.freq_bins, len(cfg.enc_channels))
        m = cfg.subbands
        if cfg.gated_pe:
            self.encoder = GatedPhaseEncoder(m, cfg.pe_channels)
            zom_in, fom_in = cfg.pe_channels, 2 * cfg.pe_channels
        else:
            self.encoder = PlainModulus()
            zom_in, fom_in = 3 * m, 6 * m
        self.zom = ZeroOrderModule(zom_in, cfg)
        self.fom = FirstOrderModule(fom_in, cfg)
        self.vad = VadHead(cfg)

    def forward(self, d, e, x) -> NetOutput:
        """d, e, x: (re, im) pairs of shape (B, M, T, F + 1).

        The network sees the lower F bins; the Nyquist bin reuses the top
        bin's mask and gets no first-order correction.
        """
        core = [(z[0][..., :-1], z[1][..., :-1]) for z in (d, e, x)]
        mag_feature, complex_feature = self.encoder(*core)
        mask, bottleneck = self.zom(mag_feature)
        mask = torch.cat([mask, mask[..., -1:]], dim=-1)
        zero_order_mag = mask * magnitude(*d)
        fo_re, fo_im = self.fom(complex_feature, bottleneck)
        first_order = (F.pad(fo_re, (0, 1)), F.pad(fo_im, (0, 1)))
        enhanced = taylor_combine(zero_order_mag, d[0], d[1], first_order)
        return NetOutput(enhanced, zero_order_mag, first_order, mask, self.vad(bottleneck))

    def param_count(self) -> int:
        return param_count(self)


# -- time-domain front end ---------------------------------------------------

class Frontend(nn.Module):
    """PQMF + per-subband STFT (and their inverses) as differentiable torch ops.

    Matches ``filterbank.pqmf_analyze`` and ``signal.stft`` numerically.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        bank = pqmf_design(cfg.subbands, cfg.pqmf_taps)
        self.delay = bank.delay
        self.register_buffer("analysis", torch.from_numpy(bank.analysis[:, None, ::-1].copy()), persistent=False)
        self.register_buffer("synthesis", torch.from_numpy(bank.synthesis[:, None, :].copy()), persistent=False)
        st = cfg.stft
        self.win, self.hop, self.nfft, self.cola = st.window_len, st.hop, st.fft_size, st.cola_gain
        self.register_buffer("window", torch.from_numpy(st.window.copy()), persistent=False)

    def layout(self, n: int):
        """(padded full-band length, subband length, frame count) for n input samples."""
        m = self.cfg.subbands
        n_full = -(-(n + self.delay) // m) * m
        n_sub = n_full // m
        frames = (self.hop + n_sub - 1) // self.hop + 1
        return n_full, n_sub, frames

    def analyze(self, wave):
        """wave (B, N) -> (re, im) each (B, M, T, fft_size / 2 + 1)."""
        n = wave.shape[-1]
        n_full, n_sub, frames = self.layout(n)
        x = F.pad(wave, (0, n_full - n)).unsqueeze(1)
        x = F.pad(x, (self.delay, 0))
        sub = F.conv1d(x, self.analysis.to(wave.dtype), stride=self.cfg.subbands)[..., :n_sub]
        total = (frames + 1) * self.hop
        sub = F.pad(sub, (self.hop, total - self.hop - n_sub))
        seg = sub.unfold(-1, self.win, self.hop) * self.window.to(wave.dtype)
        spec = torch.fft.rfft(seg, n=self.nfft, dim=-1)
        return spec.real.contiguous(), spec.imag.contiguous()

    def synthesize(self, re, im, n: int):
        """Inverse of ``analyze`` for an N-sample signal."""
        n_full, n_sub, frames = self.layout(n)
        b, m, t, _ = re.shape
        spec = torch.complex(re, im)
        seg = torch.fft.irfft(spec, n=self.nfft, dim=-1)[..., : self.win] * self.window.to(re.dtype)
        total = (t + 1) * self.hop
        seg = seg.reshape(b * m, t, self.win).transpose(1, 2)
        sub = F.fold(seg, output_size=(1, total), kernel_size=(1, self.win), stride=(1, self.hop))
        sub = sub.reshape(b, m, total)[..., self.hop: self.hop + n_sub] / self.cola
        full = F.conv_transpose1d(sub, self.synthesis.to(re.dtype), stride=self.cfg.subbands)
        return full[..., 0, self.delay: self.delay + n]


class PostFilter(nn.Module):
    """Waveforms in, enhanced waveform out."""

    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        self.cfg = cfg or NetConfig()
        self.frontend = Frontend(self.cfg)
        self.net = TaylorAECNet(self.cfg)

    def spectra(self, *waves):
        return [self.frontend.analyze(w) for w in waves]

    def forward(self, d, e, x):
        n = d.shape[-1]
        D, E, X = self.spectra(d, e, x)
        out = self.net(D, E, X)
        return self.frontend.synthesize(*out.enhanced, n), out

    def param_count(self) -> int:
        return param_count(self)

    @torch.no_grad()
    def enhance(self, d: AudioClip, e: AudioClip, x: AudioClip):
        """Eval-mode inference on clips; returns (enhanced clip, NetOutput)."""
        if not len(d) == len(e) == len(x):
            raise ValueError(f"length mismatch: d={len(d)}, e={len(e)}, x={len(x)}")
        was_training = self.training
        self.eval()
        dtype = next(self.parameters()).dtype
        waves = [torch.from_numpy(c.samples.astype(np.float64)).to(dtype)[None] for c in (d, e, x)]
        s_hat, out = self(*waves)
        self.train(was_training)
        return d.with_samples(s_hat[0].double().numpy()), out
