import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fd import grad_rel_error
from taylor_aec.losses import (
    LossConfig,
    ideal_mask,
    loss_asym,
    loss_echo_weighted,
    loss_mask,
    loss_total,
    loss_vad,
    noam_lr,
    scaled_noam_lr,
)

SHAPE = (2, 4, 6, 9)


def cplx(seed, scale=1.0):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(SHAPE, generator=g, dtype=torch.float64) * scale,
            torch.randn(SHAPE, generator=g, dtype=torch.float64) * scale)


def unweighted_oracle(est, ref, c):
    """Compressed spectral MSE computed from scratch in numpy (complex arithmetic)."""
    e = est[0].numpy() + 1j * est[1].numpy()
    r = ref[0].numpy() + 1j * ref[1].numpy()
    em, rm = np.abs(e), np.abs(r)
    ec = em**c * np.exp(1j * np.angle(e))
    rc = rm**c * np.exp(1j * np.angle(r))
    return np.mean((rm**c - em**c) ** 2 + np.abs(rc - ec) ** 2)


def active(seed):
    return (torch.rand(SHAPE[0], SHAPE[2], generator=torch.Generator().manual_seed(seed)) > 0.5).double()


# -- echo-weighted --------------------------------------------------------------

def test_echo_weighted_zero_at_target():
    s = cplx(0)
    assert loss_echo_weighted(s, s, active(0)).item() == 0.0


def test_echo_weighted_gamma_one_matches_oracle():
    est, ref = cplx(1), cplx(2)
    got = loss_echo_weighted(est, ref, active(1), LossConfig(echo_gamma=1.0)).item()
    assert got == pytest.approx(unweighted_oracle(est, ref, 0.3), rel=1e-9)


def test_echo_weighted_frame_weights_oracle():
    est, ref = cplx(3), cplx(4)
    act = active(3)
    got = loss_echo_weighted(est, ref, act, LossConfig(echo_gamma=10.0)).item()
    per_frame = []
    for b in range(SHAPE[0]):
        for t in range(SHAPE[2]):
            sl = lambda z: (z[0][b:b + 1, :, t:t + 1], z[1][b:b + 1, :, t:t + 1])
            w = 10.0 if act[b, t] else 1.0
            per_frame.append(w * unweighted_oracle(sl(est), sl(ref), 0.3))
    assert got == pytest.approx(np.mean(per_frame), rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.0, 50.0), st.integers(0, 2**31 - 1))
def test_doubling_gamma_increases_loss(gamma, seed):
    est, ref = cplx(seed), cplx(seed + 1)
    act = active(seed)
    act[0, 0] = 1.0
    lo = loss_echo_weighted(est, ref, act, LossConfig(echo_gamma=gamma)).item()
    hi = loss_echo_weighted(est, ref, act, LossConfig(echo_gamma=2 * gamma)).item()
    assert hi > lo


# -- asymmetric ---------------------------------------------------------------

def test_asym_zero_when_estimate_louder():
    ref = cplx(5)
    est = (ref[0] * 1.5, ref[1] * 1.5)
    assert loss_asym(est, ref).item() == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_asym_exactly_zero_wherever_estimate_dominates(seed):
    ref, est = cplx(seed), cplx(seed + 7)
    ref_mag = torch.sqrt(ref[0] ** 2 + ref[1] ** 2)
    est_mag = torch.sqrt(est[0] ** 2 + est[1] ** 2)
    keep = est_mag >= ref_mag
    # zeroing the estimate where it is quieter removes all contributions
    scale = torch.where(keep, torch.ones_like(ref_mag), ref_mag / est_mag * 2)
    assert loss_asym((est[0] * scale, est[1] * scale), ref).item() == 0.0


def test_asym_closed_form():
    ones = torch.ones(SHAPE, dtype=torch.float64)
    zero = torch.zeros(SHAPE, dtype=torch.float64)
    # |0| is sqrt(eps) = 1e-10, whose compressed value (~6e-8) is the only departure from 1
    assert loss_asym((zero, zero), (ones, zero)).item() == pytest.approx(1.0, abs=1e-6)


def test_asym_gradient_zero_on_louder_bins():
    ref = cplx(6)
    est = [t.clone().requires_grad_() for t in cplx(7)]
    loss = loss_asym(tuple(est), ref)
    grads = torch.autograd.grad(loss, est)
    louder = torch.sqrt(est[0] ** 2 + est[1] ** 2) > torch.sqrt(ref[0] ** 2 + ref[1] ** 2)
    assert torch.all(grads[0][louder] == 0) and torch.all(grads[1][louder] == 0)
    assert torch.any(grads[0][~louder] != 0)
    err, _, _ = grad_rel_error(lambda: loss_asym(tuple(est), ref), est, n_probe=40)
    assert err < 1e-4


# -- mask ----------------------------------------------------------------------

def test_mask_zero_at_ideal():
    d, s = cplx(8), cplx(9)
    assert loss_mask(ideal_mask(d, s), d, s).item() == 0.0


def test_ideal_mask_unity_when_s_equals_d():
    d = cplx(10)
    assert torch.allclose(ideal_mask(d, d), torch.ones(SHAPE, dtype=torch.float64), atol=1e-7)


def test_ideal_mask_clamped_at_two():
    d = cplx(11)
    assert torch.all(ideal_mask(d, (3 * d[0], 3 * d[1])) == 2.0)


# -- VAD -----------------------------------------------------------------------

def test_vad_perfect_prediction():
    labels = torch.tensor([[0.0, 1.0, 1.0, 0.0]])
    assert loss_vad(labels.clone(), labels).item() <= 2e-7


def test_vad_half():
    labels = torch.tensor([[0.0, 1.0, 1.0, 0.0]], dtype=torch.float64)
    assert loss_vad(torch.full_like(labels, 0.5), labels).item() == pytest.approx(math.log(2), abs=1e-12)


def test_vad_swapped_labels_worse():
    labels = torch.tensor([[0.0, 1.0, 1.0, 0.0]], dtype=torch.float64)
    prob = torch.tensor([[0.1, 0.9, 0.8, 0.2]], dtype=torch.float64)
    assert loss_vad(prob, 1 - labels) > loss_vad(prob, labels)


def test_vad_shape_mismatch():
    with pytest.raises(ValueError):
        loss_vad(torch.rand(1, 4), torch.zeros(1, 5))


# -- total ---------------------------------------------------------------------

def test_total_coefficients():
    # coefficient values stated for the composite objective
    parts = {k: torch.tensor(1.0) for k in ("echo_weighted", "asym", "mask", "vad")}
    assert loss_total(parts).item() == pytest.approx(2.3, abs=1e-6)
    cfg = LossConfig()
    assert (cfg.echo_weighted_weight, cfg.asym_weight, cfg.mask_weight, cfg.vad_weight) == (1.0, 1.0, 0.2, 0.1)


def test_total_zero():
    parts = {k: torch.tensor(0.0) for k in ("echo_weighted", "asym", "mask", "vad")}
    assert loss_total(parts).item() == 0.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=4, max_size=4), st.lists(st.floats(0, 5), min_size=4, max_size=4))
def test_total_linear_in_overrides(values, weights):
    keys = ("echo_weighted", "asym", "mask", "vad")
    parts = {k: torch.tensor(v, dtype=torch.float64) for k, v in zip(keys, values)}
    cfg = LossConfig(*weights)
    expected = sum(w * v for w, v in zip(weights, values))
    assert loss_total(parts, cfg).item() == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_total_without_asym():
    parts = {k: torch.tensor(1.0) for k in ("echo_weighted", "asym", "mask", "vad")}
    assert loss_total(parts, LossConfig(asym=False)).item() == pytest.approx(1.3, abs=1e-6)


@pytest.mark.parametrize("kwargs", [dict(echo_gamma=0.5), dict(compress=0.0), dict(compress=1.5)])
def test_invalid_loss_config(kwargs):
    with pytest.raises(ValueError):
        LossConfig(**kwargs)


def test_all_losses_nonnegative_and_zero_at_oracle():
    s, d = cplx(12), cplx(13)
    labels = active(12)
    assert loss_echo_weighted(s, s, labels).item() == 0
    assert loss_asym(s, s).item() == 0
    assert loss_mask(ideal_mask(d, s), d, s).item() == 0
    assert loss_vad(labels, labels).item() <= 2e-7
    est = cplx(14)
    for value in (loss_echo_weighted(est, s, labels), loss_asym(est, s), loss_mask(torch.rand(SHAPE), d, s),
                  loss_vad(torch.rand(labels.shape), labels)):
        assert value.item() >= 0


# -- gradients at 64-bit -------------------------------------------------------

def test_loss_gradients_match_finite_differences():
    ref, d = cplx(15), cplx(16)
    est = [t.clone().requires_grad_() for t in cplx(17)]
    mask = (torch.rand(SHAPE, dtype=torch.float64) * 2).requires_grad_()
    logits = torch.randn(SHAPE[0], SHAPE[2], dtype=torch.float64, requires_grad=True)
    labels = active(15)
    cases = [
        (lambda: loss_echo_weighted(tuple(est), ref, labels), est),
        (lambda: loss_asym(tuple(est), ref), est),
        (lambda: loss_mask(mask, d, ref), [mask]),
        (lambda: loss_vad(torch.sigmoid(logits), labels), [logits]),
    ]
    for fn, tensors in cases:
        err, _, _ = grad_rel_error(fn, tensors, n_probe=30)
        assert err < 1e-4


# -- learning-rate schedule -------------------------------------------------------

def test_noam_direct_evaluation():
    for step in (1, 5000, 20000):
        direct = (1e-3) ** -0.5 * min(step**-0.5, step * 5000**-1.5)
        assert noam_lr(step, 1e-3, 5000) == pytest.approx(direct, rel=1e-9)
    assert noam_lr(5000) == pytest.approx(0.44721, rel=1e-5)
    assert noam_lr(1) == pytest.approx(8.944e-5, rel=1e-3)


def test_noam_peak_and_monotonicity():
    lrs = np.array([noam_lr(s, 1e-3, 200) for s in range(1, 1000)])
    assert int(np.argmax(lrs)) + 1 == 200
    assert np.all(np.diff(lrs[:199]) > 0)
    assert np.all(np.diff(lrs[199:]) < 0)
    assert lrs[199] == pytest.approx((1e-3) ** -0.5 * 200**-0.5, rel=1e-12)


def test_noam_step_zero_rejected():
    with pytest.raises(ValueError):
        noam_lr(0)


def test_scaled_noam_peak():
    assert scaled_noam_lr(5000, 1e-3) == pytest.approx(1e-3, rel=1e-12)
    assert scaled_noam_lr(20000, 1e-3) / scaled_noam_lr(5000, 1e-3) == pytest.approx(0.5, rel=1e-12)
