"""Autodiff substrate: torch tensors plus the few pieces torch lacks here.

Adds causal and complex convolutions, a single-use ``backward``, a plain Adam
with explicit state, and a flat little-endian checkpoint format.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

MAG_EPS = 1e-20


def magnitude(re: torch.Tensor, im: torch.Tensor, eps: float = MAG_EPS) -> torch.Tensor:
    return torch.sqrt(re * re + im * im + eps)


def complex_mul(ar, ai, br, bi):
    return ar * br - ai * bi, ar * bi + ai * br


def backward(loss: torch.Tensor) -> None:
    """Backpropagate a scalar loss once; a second call on the same graph raises."""
    if loss.dim() != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if getattr(loss, "_backward_done", False):
        raise RuntimeError("backward already ran on this graph; run the forward pass again")
    if not loss.requires_grad:
        raise ValueError("loss is not attached to any parameter")
    loss.backward()
    loss._backward_done = True


class CausalConv2d(nn.Module):
    """Conv over (B, C, T, F): left-padded in time, symmetric 'same'-style in frequency."""

    def __init__(self, in_ch, out_ch, kernel=(2, 3), stride=(1, 1), dilation=(1, 1), groups=1, bias=True):
        super().__init__()
        kt, kf = kernel
        self.time_pad = (kt - 1) * dilation[0]
        self.freq_pad = (kf - 1) * dilation[1] // 2
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, dilation=dilation,
                              padding=(0, self.freq_pad), groups=groups, bias=bias)

    def forward(self, x):
        return self.conv(F.pad(x, (0, 0, self.time_pad, 0)))


class CausalConvTranspose2d(nn.Module):
    """Transposed conv doubling frequency; extra trailing frames are cropped."""

    def __init__(self, in_ch, out_ch, kernel=(2, 3), stride=(1, 2)):
        super().__init__()
        kt, kf = kernel
        self.conv = nn.ConvTranspose2d(in_ch, out_ch, kernel, stride=stride,
                                       padding=(0, (kf - 1) // 2), output_padding=(0, stride[1] - 1))

    def forward(self, x):
        t = x.shape[2]
        return self.conv(x)[:, :, :t]


class ComplexConv2d(nn.Module):
    """(a + ib) * (w_r + i w_i) realised with two real causal convs."""

    def __init__(self, in_ch, out_ch, kernel=(2, 3), stride=(1, 1)):
        super().__init__()
        self.real = CausalConv2d(in_ch, out_ch, kernel, stride, bias=False)
        self.imag = CausalConv2d(in_ch, out_ch, kernel, stride, bias=False)
        self.bias_re = nn.Parameter(torch.zeros(out_ch))
        self.bias_im = nn.Parameter(torch.zeros(out_ch))

    def forward(self, re, im):
        out_re = self.real(re) - self.imag(im) + self.bias_re.view(1, -1, 1, 1)
        out_im = self.imag(re) + self.real(im) + self.bias_im.view(1, -1, 1, 1)
        return out_re, out_im


class Adam:
    """Adam with bias correction; moments live in ``self.m`` / ``self.v``."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self, lr: float):
        adam_step(self.params, [p.grad for p in self.params], lr, self)

    def state(self) -> dict:
        out = {"adam.step": torch.tensor([float(self.step_count)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam.m.{i}"] = m
            out[f"adam.v.{i}"] = v
        return out

    def load_state(self, tensors: dict):
        self.step_count = int(tensors["adam.step"].reshape(-1)[0])
        for i in range(len(self.params)):
            self.m[i].copy_(torch.as_tensor(tensors[f"adam.m.{i}"]).reshape(self.m[i].shape))
            self.v[i].copy_(torch.as_tensor(tensors[f"adam.v.{i}"]).reshape(self.v[i].shape))


@torch.no_grad()
def adam_step(params, grads, lr: float, opt: Adam):
    opt.step_count += 1
    t = opt.step_count
    b1, b2 = opt.beta1, opt.beta2
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        if g is None:
            continue
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.sub_(lr * m_hat / (v_hat.sqrt() + opt.eps))


def save_checkpoint(path, tensors: dict) -> None:
    """u32 count; per entry u32 name length, name, u32 rank, u32 dims, f32 payload (LE)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(torch.as_tensor(value).detach().cpu().numpy(), dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    try:
        (count,) = struct.unpack_from("<I", raw, 0)
        pos = 4
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(raw):
                raise ValueError("payload runs past end of file")
            out[name] = torch.from_numpy(np.frombuffer(raw, "<f4", int(np.prod(shape, dtype=np.int64)), pos).reshape(shape).copy())
            pos += size
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    return out


def module_tensors(module: nn.Module) -> dict:
    """Parameters and buffers by name (batch-norm counters included)."""
    out = {name: p for name, p in module.named_parameters()}
    out.update({name: b for name, b in module.named_buffers()})
    return out


def load_module_tensors(module: nn.Module, tensors: dict) -> None:
    own = module_tensors(module)
    missing = [name for name in own if name not in tensors]
    if missing:
        raise ValueError(f"checkpoint lacks {len(missing)} tensors, e.g. {missing[:3]}")
    with torch.no_grad():
        for name, target in own.items():
            target.copy_(tensors[name].reshape(target.shape).to(target.dtype))


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
