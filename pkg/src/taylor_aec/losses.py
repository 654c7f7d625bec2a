"""Training objectives and the Noam learning-rate schedule.

Complex spectra are (re, im) tensor pairs. Magnitudes are power-law
compressed with exponent ``c``; below ``COMPRESS_FLOOR`` the compression
continues linearly so that zero maps to zero with a bounded slope.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from taylor_aec.tensor import magnitude

COMPRESS_FLOOR = 1e-4
MASK_EPS = 1e-8
VAD_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    echo_weighted_weight: float = 1.0
    asym_weight: float = 1.0
    mask_weight: float = 0.2
    vad_weight: float = 0.1
    echo_gamma: float = 10.0
    compress: float = 0.3
    asym: bool = True

    def __post_init__(self):
        if self.echo_gamma < 1:
            raise ValueError("echo_gamma must be >= 1")
        if not 0 < self.compress <= 1:
            raise ValueError("compression exponent must lie in (0, 1]")

    @classmethod
    def from_flat(cls, record: dict) -> "LossConfig":
        kwargs = {}
        for key in cls.__dataclass_fields__:
            if key in record:
                value = record[key]
                kwargs[key] = str(value).lower() in ("1", "true", "yes", "on") if key == "asym" else float(value)
        return cls(**kwargs)


def compress_gain(mag: torch.Tensor, c: float) -> torch.Tensor:
    return torch.clamp(mag, min=COMPRESS_FLOOR) ** (c - 1.0)


def compressed(re, im, c):
    """(|X|^c, X |X|^(c-1)) with the linear tail below COMPRESS_FLOOR."""
    mag = magnitude(re, im)
    g = compress_gain(mag, c)
    return mag * g, (re * g, im * g)


def _frame_weights(echo_active, gamma, like):
    w = 1.0 + (gamma - 1.0) * echo_active.to(like.dtype)
    return w[:, None, :, None]


def loss_echo_weighted(est, ref, echo_active, cfg: LossConfig = LossConfig()):
    """Compressed magnitude + compressed complex MSE, frames with echo weighted by gamma.

    est/ref: (re, im) pairs shaped (B, M, T, F); echo_active: (B, T) in {0, 1}.
    """
    est_mag, (est_re, est_im) = compressed(*est, cfg.compress)
    ref_mag, (ref_re, ref_im) = compressed(*ref, cfg.compress)
    per_bin = (ref_mag - est_mag) ** 2 + (ref_re - est_re) ** 2 + (ref_im - est_im) ** 2
    return torch.mean(per_bin * _frame_weights(echo_active, cfg.echo_gamma, per_bin))


def loss_asym(est, ref, cfg: LossConfig = LossConfig()):
    """Penalises only bins where the estimate's compressed magnitude falls short."""
    est_mag, _ = compressed(*est, cfg.compress)
    ref_mag, _ = compressed(*ref, cfg.compress)
    return torch.mean(torch.relu(ref_mag - est_mag) ** 2)


def ideal_mask(d, s):
    return torch.clamp(magnitude(*s) / (magnitude(*d) + MASK_EPS), 0.0, 2.0)


def loss_mask(mask, d, s):
    return torch.mean((mask - ideal_mask(d, s).detach()) ** 2)


def loss_vad(vad_prob, labels):
    if vad_prob.shape != labels.shape:
        raise ValueError(f"frame count mismatch: {tuple(vad_prob.shape)} vs {tuple(labels.shape)}")
    p = torch.clamp(vad_prob, VAD_CLAMP, 1.0 - VAD_CLAMP)
    y = labels.to(p.dtype)
    return torch.mean(-(y * torch.log(p) + (1 - y) * torch.log(1 - p)))


def loss_total(parts: dict, cfg: LossConfig = LossConfig()):
    total = cfg.echo_weighted_weight * parts["echo_weighted"]
    if cfg.asym:
        total = total + cfg.asym_weight * parts["asym"]
    return total + cfg.mask_weight * parts["mask"] + cfg.vad_weight * parts["vad"]


def compute_losses(out, d_spec, s_spec, echo_active, vad_labels, cfg: LossConfig = LossConfig()) -> dict:
    """All four parts plus their weighted total for one network output."""
    parts = {
        "echo_weighted": loss_echo_weighted(out.enhanced, s_spec, echo_active, cfg),
        "asym": loss_asym(out.enhanced, s_spec, cfg),
        "mask": loss_mask(out.mask, d_spec, s_spec),
        "vad": loss_vad(out.vad_prob, vad_labels),
    }
    parts["total"] = loss_total(parts, cfg)
    return parts


def noam_lr(step: int, d: float = 1e-3, warmup: int = 5000) -> float:
    """d^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return d**-0.5 * min(step**-0.5, step * warmup**-1.5)


def scaled_noam_lr(step: int, peak: float, d: float = 1e-3, warmup: int = 5000) -> float:
    """Noam shape rescaled so the value at step == warmup equals ``peak``."""
    return peak * noam_lr(step, d, warmup) / noam_lr(warmup, d, warmup)
