"""Central finite-difference gradient oracle.

Only forward evaluations are used on the numeric side, so the check does not
lean on the autograd machinery it is verifying.
"""

import numpy as np
import torch

EPS = 1e-7


def probe_indices(tensors, n_probe, rng):
    """``n_probe`` random (tensor index, flat index) pairs, spread over all tensors."""
    sizes = np.array([t.numel() for t in tensors])
    picks = rng.choice(sizes.sum(), size=min(n_probe, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    out = []
    for p in picks:
        i = int(np.searchsorted(bounds, p, side="right"))
        out.append((i, int(p - (bounds[i - 1] if i else 0))))
    return out


def numeric_grad(fn, tensors, probes, eps=EPS):
    out = []
    with torch.no_grad():
        for i, j in probes:
            flat = tensors[i].view(-1)
            orig = flat[j].item()
            flat[j] = orig + eps
            hi = float(fn())
            flat[j] = orig - eps
            lo = float(fn())
            flat[j] = orig
            out.append((hi - lo) / (2 * eps))
    return np.array(out)


def analytic_grad(fn, tensors, probes):
    for t in tensors:
        t.grad = None
    loss = fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return np.array([0.0 if grads[i] is None else grads[i].reshape(-1)[j].item() for i, j in probes])


def grad_rel_error(fn, tensors, n_probe=20, seed=0, eps=EPS):
    """||g_autograd - g_fd|| / max(||g_autograd||, ||g_fd||) over the probed entries."""
    tensors = list(tensors)
    probes = probe_indices(tensors, n_probe, np.random.default_rng(seed))
    num = numeric_grad(fn, tensors, probes, eps)
    ana = analytic_grad(fn, tensors, probes)
    scale = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-30)
    return float(np.linalg.norm(num - ana) / scale), ana, num
