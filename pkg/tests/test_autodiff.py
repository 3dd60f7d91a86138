import math

import numpy as np
import pytest
import torch

from bergomi_pinn.autodiff import (DTYPE, PAIR_NAMES, DerivBundle, Jet, NumericError, activations, eval_with_derivs,
                                   weight_gradient)


def _pts(n=100, seed=0):
    g = np.random.default_rng(seed)
    return [torch.tensor(g.uniform(-1, 1, n), dtype=DTYPE) for _ in range(4)]


class TestActivations:
    def test_silu_at_zero(self):
        f, d1, _ = activations(0.0, "silu")
        assert float(f) == 0.0 and float(d1) == 0.5

    def test_softplus(self):
        f, d1, _ = activations(0.0, "softplus")
        assert float(f) == pytest.approx(math.log(2)) and float(d1) == 0.5
        f, _, _ = activations(100.0, "softplus")
        assert float(f) == pytest.approx(100.0, abs=1e-12)

    @pytest.mark.parametrize("name", ["sigmoid", "silu", "softplus"])
    def test_derivatives_match_finite_differences(self, name):
        z = torch.linspace(-6, 6, 241, dtype=DTYPE)
        h = 1e-5
        f, d1, d2 = activations(z, name)
        fp, d1p, _ = activations(z + h, name)
        fm, d1m, _ = activations(z - h, name)
        torch.testing.assert_close(d1, (fp - fm) / (2 * h), atol=1e-8, rtol=0)
        torch.testing.assert_close(d2, (d1p - d1m) / (2 * h), atol=1e-8, rtol=0)


class TestJetAlgebra:
    def test_square_of_s(self):
        t, s, x1, x2 = _pts()
        b = eval_with_derivs(lambda t, s, x1, x2: s * s, t, s, x1, x2)
        torch.testing.assert_close(b.ds, 2 * s)
        torch.testing.assert_close(b.dss, torch.full_like(s, 2.0))
        for name in ("dt", "dx1", "dx2", "dx1x1", "dx2x2", "dsx1", "dsx2", "dx1x2"):
            assert torch.all(getattr(b, name) == 0)

    def test_product_cross_term(self):
        t, s, x1, x2 = _pts()
        b = eval_with_derivs(lambda t, s, x1, x2: s * x1, t, s, x1, x2)
        assert torch.all(b.dsx1 == 1) and torch.all(b.dss == 0) and torch.all(b.dx1x1 == 0)

    def test_composite_against_closed_form(self):
        t, s, x1, x2 = _pts()
        f = lambda t, s, x1, x2: (s * x2 + t).exp() / (x1 * x1 + 2.0) + (s - x2).sigmoid().log()  # noqa: E731
        b = eval_with_derivs(f, t, s, x1, x2)
        # reference through nested torch autograd on plain tensors
        args = [a.clone().requires_grad_(True) for a in (t, s, x1, x2)]
        val = torch.exp(args[1] * args[3] + args[0]) / (args[2] ** 2 + 2.0) + torch.log(torch.sigmoid(args[1] - args[3]))
        g = torch.autograd.grad(val.sum(), args, create_graph=True)
        torch.testing.assert_close(b.value, val.detach())
        for k, name in enumerate(("dt", "ds", "dx1", "dx2")):
            torch.testing.assert_close(getattr(b, name), g[k].detach(), rtol=1e-12, atol=1e-12)
        idx = {"s": 1, "x1": 2, "x2": 3}
        for name in PAIR_NAMES:
            a, c = (name[0], name[1:]) if name[0] == "s" else (name[:2], name[2:])
            second = torch.autograd.grad(g[idx[a]].sum(), args[idx[c]], retain_graph=True)[0]
            torch.testing.assert_close(getattr(b, "d" + name), second.detach(), rtol=1e-12, atol=1e-12)

    def test_hessian_symmetric(self):
        t, s, x1, x2 = _pts()
        b = eval_with_derivs(lambda t, s, x1, x2: (s * x1 + x2 * s).exp(), t, s, x1, x2)
        H = b.hessian()
        torch.testing.assert_close(H, H.transpose(-1, -2))

    def test_value_only_and_mixed(self):
        a = Jet(torch.tensor([1.0, 2.0], dtype=DTYPE))
        v = Jet.variable(torch.tensor([3.0, 4.0], dtype=DTYPE), 1)
        out = a * v + a
        assert out.d1 is not None
        torch.testing.assert_close(out.d1[:, 1], a.val)

    def test_non_finite_detection(self):
        t, s, x1, x2 = _pts()
        with pytest.raises(NumericError):
            eval_with_derivs(lambda t, s, x1, x2: (s * 0.0).log(), t, s, x1, x2)

    def test_deterministic(self):
        t, s, x1, x2 = _pts()
        f = lambda t, s, x1, x2: (s * x1).silu() * x2.softplus() + t  # noqa: E731
        b1 = eval_with_derivs(f, t, s, x1, x2)
        b2 = eval_with_derivs(f, t, s, x1, x2)
        for name in DerivBundle.__dataclass_fields__:
            assert torch.equal(getattr(b1, name), getattr(b2, name))


def test_weight_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(0)
    W = torch.randn(3, 4, dtype=DTYPE, generator=g).requires_grad_(True)
    x = torch.randn(10, 4, dtype=DTYPE, generator=g)

    def loss_of(w):
        return (torch.nn.functional.silu(x @ w.T) ** 2).mean()

    grad = weight_gradient(loss_of(W), [W])
    h = 1e-6
    with torch.no_grad():
        for k in range(W.numel()):
            Wp, Wm = W.clone().view(-1), W.clone().view(-1)
            Wp[k] += h
            Wm[k] -= h
            fd = (loss_of(Wp.view(3, 4)) - loss_of(Wm.view(3, 4))) / (2 * h)
            assert float(grad[k]) == pytest.approx(float(fd), rel=1e-6, abs=1e-10)
