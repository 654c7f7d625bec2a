import struct

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from fd import grad_rel_error
from taylor_aec.tensor import (
    Adam,
    CausalConv2d,
    CausalConvTranspose2d,
    ComplexConv2d,
    backward,
    complex_mul,
    load_checkpoint,
    magnitude,
    save_checkpoint,
)

TOL = 1e-4


@pytest.fixture(autouse=True)
def float64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def leaf(*shape, gen):
    return torch.randn(*shape, generator=gen).requires_grad_()


def gru_cell_case(g):
    cell = nn.GRUCell(3, 4)
    x = torch.randn(2, 3, generator=g)
    h = torch.randn(2, 4, generator=g)
    return (lambda: torch.sum(torch.tanh(cell(x, h))), list(cell.parameters()))


def batch_norm_case(g, training):
    bn = nn.BatchNorm2d(3)
    with torch.no_grad():
        bn.weight.uniform_(0.5, 1.5, generator=g)
        bn.bias.normal_(generator=g)
        bn.running_mean.normal_(generator=g)
        bn.running_var.uniform_(0.5, 2.0, generator=g)
    bn.train(training)
    bn.momentum = 0.0  # keep running stats fixed across repeated evaluations
    x = leaf(2, 3, 4, 5, gen=g)
    w = torch.randn(2, 3, 4, 5, generator=g)
    return (lambda: torch.sum(w * bn(x)), [x, bn.weight, bn.bias])


# (name, builder(generator) -> (scalar fn, tensors))
OPS = {
    "add": lambda g: (lambda a, b: (lambda: torch.sum(torch.sin(a + b)), [a, b]))(leaf(3, 4, gen=g), leaf(3, 4, gen=g)),
    "mul": lambda g: (lambda a, b: (lambda: torch.sum(a * b * a), [a, b]))(leaf(3, 4, gen=g), leaf(3, 4, gen=g)),
    "matmul": lambda g: (lambda a, b: (lambda: torch.sum(torch.tanh(a @ b)), [a, b]))(leaf(3, 4, gen=g), leaf(4, 2, gen=g)),
    "conv2d": lambda g: (lambda x, w, b: (lambda: torch.sum(F.conv2d(x, w, b, stride=(1, 2), padding=(1, 1), dilation=(2, 1)) ** 2), [x, w, b]))(
        leaf(2, 3, 6, 8, gen=g), leaf(4, 3, 2, 3, gen=g), leaf(4, gen=g)),
    "transpose_conv2d": lambda g: (lambda x, w, b: (lambda: torch.sum(torch.sin(F.conv_transpose2d(x, w, b, stride=(1, 2), padding=(0, 1), output_padding=(0, 1)))), [x, w, b]))(
        leaf(2, 3, 4, 5, gen=g), leaf(3, 2, 2, 3, gen=g), leaf(2, gen=g)),
    "leaky_relu": lambda g: (lambda x: (lambda: torch.sum(F.leaky_relu(x, 0.01) * torch.arange(12.0).reshape(3, 4)), [x]))(leaf(3, 4, gen=g)),
    "sigmoid": lambda g: (lambda x: (lambda: torch.sum(torch.sigmoid(x) ** 2), [x]))(leaf(3, 4, gen=g)),
    "tanh": lambda g: (lambda x: (lambda: torch.sum(torch.tanh(x) ** 3), [x]))(leaf(3, 4, gen=g)),
    "prelu": lambda g: (lambda x, a: (lambda: torch.sum(F.prelu(x, a) * x), [x, a]))(leaf(2, 3, 4, gen=g), leaf(3, gen=g)),
    "batch_norm_train": lambda g: batch_norm_case(g, True),
    "batch_norm_eval": lambda g: batch_norm_case(g, False),
    "gru_cell": gru_cell_case,
    "concat": lambda g: (lambda a, b: (lambda: torch.sum(torch.cos(torch.cat([a, 2 * b], 1))), [a, b]))(leaf(2, 3, gen=g), leaf(2, 4, gen=g)),
    "split": lambda g: (lambda a: (lambda: torch.sum(torch.split(a, [2, 3], 1)[0] ** 2) - torch.sum(torch.split(a, [2, 3], 1)[1] ** 3), [a]))(leaf(2, 5, gen=g)),
    "reshape": lambda g: (lambda a, w: (lambda: torch.sum(a.reshape(4, 6) @ w), [a, w]))(leaf(2, 3, 4, gen=g), leaf(6, 2, gen=g)),
    "magnitude": lambda g: (lambda r, i: (lambda: torch.sum(magnitude(r, i)), [r, i]))(leaf(3, 4, gen=g), leaf(3, 4, gen=g)),
    "complex_mul": lambda g: (lambda a, b, c, d: (lambda: torch.sum(torch.stack(complex_mul(a, b, c, d)) ** 2), [a, b, c, d]))(
        *(leaf(3, gen=g) for _ in range(4))),
}


def module_case(g, make):
    m = make()
    with torch.no_grad():
        for p in m.parameters():
            p.normal_(0, 0.5, generator=g)
    return m


MODULE_OPS = {
    "causal_conv2d": lambda g: (lambda m, x: (lambda: torch.sum(torch.tanh(m(x))), [x, *m.parameters()]))(
        module_case(g, lambda: CausalConv2d(3, 4, (2, 3), (1, 2), (2, 1))), leaf(2, 3, 5, 8, gen=g)),
    "causal_conv_transpose2d": lambda g: (lambda m, x: (lambda: torch.sum(torch.tanh(m(x))), [x, *m.parameters()]))(
        module_case(g, lambda: CausalConvTranspose2d(3, 2)), leaf(2, 3, 5, 4, gen=g)),
    "complex_conv2d": lambda g: (lambda m, r, i: (lambda: torch.sum(magnitude(*m(r, i))), [r, i, *m.parameters()]))(
        module_case(g, lambda: ComplexConv2d(2, 3)), leaf(1, 2, 4, 6, gen=g), leaf(1, 2, 4, 6, gen=g)),
}


@pytest.mark.parametrize("name", list(OPS) + list(MODULE_OPS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_gradient_matches_finite_differences(name, seed):
    g = torch.Generator().manual_seed(seed)
    fn, tensors = {**OPS, **MODULE_OPS}[name](g)
    err, _, _ = grad_rel_error(fn, tensors, n_probe=30, seed=seed)
    assert err < TOL, f"{name}: {err}"


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(2, 6), st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_conv_gradient_property(b, c, t, f, seed):
    g = torch.Generator().manual_seed(seed)
    m = module_case(g, lambda: CausalConv2d(c, 2, (2, 3)))
    x = leaf(b, c, t, f, gen=g)
    err, _, _ = grad_rel_error(lambda: torch.sum(torch.sigmoid(m(x))), [x, *m.parameters()], n_probe=10, seed=seed)
    assert err < TOL


def test_sum_gradient_is_ones():
    p = torch.randn(3, 4, requires_grad=True)
    backward(torch.sum(p))
    assert torch.equal(p.grad, torch.ones(3, 4))


def test_matmul_closed_form():
    w = torch.randn(3, 4, requires_grad=True)
    x = torch.randn(4)
    backward(torch.sum(w @ x))
    assert torch.allclose(w.grad, x.expand(3, 4))


def test_conv_bn_relu_composite():
    g = torch.Generator().manual_seed(7)
    net = nn.Sequential(nn.Conv2d(2, 3, 3, padding=1), nn.BatchNorm2d(3), nn.ReLU())
    with torch.no_grad():
        for p in net.parameters():
            p.normal_(generator=g)
    net[1].momentum = 0.0
    x = torch.randn(2, 2, 5, 5, generator=g)
    err, _, _ = grad_rel_error(lambda: torch.sum(net(x) ** 2), list(net.parameters()), n_probe=30)
    assert err < TOL


def test_backward_rejects_non_scalar():
    p = torch.randn(3, requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(p * 2)


def test_backward_twice_rejected():
    p = torch.randn(3, requires_grad=True)
    loss = torch.sum(p * p)
    backward(loss)
    with pytest.raises(RuntimeError):
        backward(loss)


def test_backward_needs_parameters():
    with pytest.raises(ValueError):
        backward(torch.sum(torch.ones(3)))


def test_shape_mismatch_message_names_both_shapes():
    with pytest.raises(RuntimeError, match=r"2x3.*4x5"):
        torch.ones(2, 3) @ torch.ones(4, 5)


def test_adam_first_step():
    p = torch.tensor([1.0], requires_grad=True)
    opt = Adam([p])
    p.grad = torch.tensor([1.0])
    opt.step(0.1)
    # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    assert p.item() == pytest.approx(1.0 - 0.1 / (1 + 1e-8), abs=1e-12)


def test_adam_zero_grad_leaves_param():
    p = torch.tensor([0.5, -2.0], requires_grad=True)
    opt = Adam([p])
    p.grad = torch.zeros(2)
    opt.step(0.1)
    assert torch.equal(p.detach(), torch.tensor([0.5, -2.0]))


def test_adam_two_step_trace():
    b1, b2, eps, lr, g = 0.9, 0.999, 1e-8, 0.01, 0.3
    p = torch.tensor([2.0], requires_grad=True)
    opt = Adam([p])
    expected, m, v = 2.0, 0.0, 0.0
    for t in (1, 2):
        p.grad = torch.tensor([g])
        opt.step(lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        expected -= lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
        assert p.item() == pytest.approx(expected, abs=1e-12)


def test_complex_conv_matches_complex_multiplication():
    torch.manual_seed(0)
    conv = ComplexConv2d(3, 2, kernel=(1, 1))
    with torch.no_grad():
        conv.bias_re.normal_()
        conv.bias_im.normal_()
    re, im = torch.randn(2, 3, 4, 5), torch.randn(2, 3, 4, 5)
    out_re, out_im = conv(re, im)
    w = torch.complex(conv.real.conv.weight[..., 0, 0], conv.imag.conv.weight[..., 0, 0])
    z = torch.complex(re, im)
    direct = torch.einsum("oc,bctf->botf", w, z) + torch.complex(conv.bias_re, conv.bias_im).view(1, -1, 1, 1)
    assert torch.max(torch.abs(out_re - direct.real)) < 1e-6
    assert torch.max(torch.abs(out_im - direct.imag)) < 1e-6


def test_causal_conv_ignores_future():
    torch.manual_seed(1)
    conv = CausalConv2d(2, 3, (3, 3), dilation=(2, 1))
    x = torch.randn(1, 2, 10, 6)
    y = conv(x)
    x2 = x.clone()
    x2[:, :, 6:] = torch.randn(1, 2, 4, 6)
    assert torch.equal(conv(x2)[:, :, :6], y[:, :, :6])
    assert y.shape == (1, 3, 10, 6)


def test_determinism():
    def run():
        torch.manual_seed(3)
        net = nn.Sequential(CausalConv2d(2, 4), nn.BatchNorm2d(4), nn.LeakyReLU(0.01))
        x = torch.randn(2, 2, 6, 8)
        loss = torch.sum(net(x) ** 2)
        backward(loss)
        return loss.detach(), [p.grad.clone() for p in net.parameters()]

    (l1, g1), (l2, g2) = run(), run()
    assert torch.equal(l1, l2)
    assert all(torch.equal(a, b) for a, b in zip(g1, g2))


def test_checkpoint_layout(tmp_path):
    tensors = {"a": torch.arange(6.0).reshape(2, 3), "bb": torch.tensor([1.5])}
    save_checkpoint(tmp_path / "c.bin", tensors)
    raw = (tmp_path / "c.bin").read_bytes()
    assert struct.unpack_from("<I", raw, 0) == (2,)
    assert struct.unpack_from("<I", raw, 4) == (1,) and raw[8:9] == b"a"
    assert struct.unpack_from("<III", raw, 9) == (2, 2, 3)
    assert np.array_equal(np.frombuffer(raw, "<f4", 6, 21), np.arange(6, dtype=np.float32))
    back = load_checkpoint(tmp_path / "c.bin")
    assert list(back) == ["a", "bb"]
    assert torch.equal(back["a"], tensors["a"].float())


def test_truncated_checkpoint(tmp_path):
    save_checkpoint(tmp_path / "c.bin", {"w": torch.ones(10)})
    raw = (tmp_path / "c.bin").read_bytes()
    for cut in (2, 10, len(raw) - 4):
        (tmp_path / "t.bin").write_bytes(raw[:cut])
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "t.bin")
