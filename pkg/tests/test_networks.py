import math

import numpy as np
import pytest
import torch

from bergomi_pinn.analytic import bs_barrier, bs_vanilla
from bergomi_pinn.autodiff import DTYPE, Jet
from bergomi_pinn.bergomi import PointBatch
from bergomi_pinn.losses import loss_knock_in, loss_vanilla
from bergomi_pinn.networks import (BarrierNet, CheckpointError, InputEncoding, State, VanillaNet, checkpoint_bytes,
                                   load_checkpoint, save_checkpoint, singular_barrier_f1, singular_barrier_f2,
                                   singular_vanilla)
from bergomi_pinn.options import KNOCK_IN_KINDS, OptionKind
from tests.conftest import make_point
from tests.fd import check_partials, weight_gradient_errors


def _state(points, derivs=False):
    X = torch.as_tensor(np.stack([p.to_vector() for p in points]), dtype=DTYPE)
    return State.from_points(X, points[0].curve_mode, derivs)


def _const(v, n):
    return Jet(torch.full((n,), float(v), dtype=DTYPE))


class TestSingularVanilla:
    def test_payoff_limit(self):
        s = np.log([60.0, 95.0, 105.0, 180.0])
        for eta in (1, -1):
            pts = [make_point(s=x, t=1 - 1e-12, T=1.0, xi=0.09, r=0.05, q=0.02) for x in s]
            a = singular_vanilla(_const(0.3, 4), _const(1.2, 4), _state(pts), eta).val.numpy()
            payoff = np.maximum(eta * (np.exp(s) - 100), 0)
            assert np.all(np.abs(a - payoff) <= 1e-6 * np.exp(s))

    def test_exact_maturity_branch(self):
        pts = [make_point(s=math.log(120), t=1.0, T=1.0)]
        a = singular_vanilla(_const(0.0, 1), _const(1.0, 1), _state(pts), 1).val
        assert float(a) == pytest.approx(20.0, abs=1e-12)

    def test_gamma_to_infinity(self):
        for s in np.log([50.0, 100.0, 200.0]):
            p = make_point(s=s, T=1.5, q=0.03, r=0.01)
            a = float(singular_vanilla(_const(0.1, 1), _const(1e6, 1), _state([p]), 1).val)
            assert a == pytest.approx(math.exp(s - 0.03 * 1.5), rel=1e-4)

    def test_bs_shape_with_cdf_approximation(self):
        # with beta = r - q the drift matches the closed form; gamma sigma_bar = sigma
        rng = np.random.default_rng(0)
        for _ in range(50):
            r, q = rng.uniform(0, 0.1, 2)
            p = make_point(s=math.log(rng.uniform(50, 200)), T=rng.uniform(0.05, 3), r=r, q=q,
                           xi=rng.uniform(0.0025, 0.25))
            sigma = math.sqrt(p.params.curve.values[0]) * 1.3
            for eta in (1, -1):
                approx = float(singular_vanilla(_const(r - q, 1), _const(1.3, 1), _state([p]), eta).val)
                exact = float(singular_vanilla(_const(r - q, 1), _const(1.3, 1), _state([p]), eta, exact=True).val)
                ref = bs_vanilla(p.s, 100, p.T, sigma, r, q, eta)
                assert exact == pytest.approx(ref, abs=1e-10)
                # two CDF evaluations, each off by at most 2e-3
                assert abs(approx - ref) <= 2e-3 * (math.exp(p.s) + 100)


class TestSingularBarrier:
    def test_f1_heaviside_limit(self):
        for s, expect in [(math.log(130), 1.0), (math.log(110), 0.0)]:
            p = make_point(kind="up-in-call", s=s, B=120, t=1 - 1e-12, T=1.0)
            val = float(singular_barrier_f1(_const(0.2, 1), _const(1.0, 1), _state([p]), +1).val)
            assert abs(val - expect) <= 1e-6

    def test_f1_at_barrier_is_half(self):
        for T in (0.01, 1.0, 3.0):
            p = make_point(kind="up-in-call", s=math.log(120), B=120, T=T, r=0.03, q=0.03)
            assert float(singular_barrier_f1(_const(0.0, 1), _const(1.0, 1), _state([p]), 1).val) == 0.5

    def test_f1_mirror_symmetry(self):
        ln_b = math.log(110)
        for s in np.linspace(ln_b - 0.3, ln_b + 0.3, 13):
            up = make_point(s=s, B=110, T=0.7)
            down = make_point(s=2 * ln_b - s, B=110, T=0.7)
            a = float(singular_barrier_f1(_const(0.0, 1), _const(1.0, 1), _state([up]), 1).val)
            b = float(singular_barrier_f1(_const(0.0, 1), _const(1.0, 1), _state([down]), -1).val)
            assert a == pytest.approx(b, abs=1e-12)

    @pytest.mark.parametrize("kind,B", [("up-in-put", 120), ("up-in-put", 90), ("down-in-call", 80),
                                        ("down-in-call", 115)])
    def test_f2_matches_closed_form(self, kind, B):
        k = OptionKind.parse(kind)
        rng = np.random.default_rng(1)
        for _ in range(20):
            lo, hi = (math.log(50), math.log(B)) if k.is_up else (math.log(B), math.log(200))
            r, q = rng.uniform(0, 0.1, 2)
            p = make_point(kind=k, s=rng.uniform(lo, hi), B=B, T=rng.uniform(0.05, 3), r=r, q=q,
                           xi=rng.uniform(0.01, 0.25))
            sigma = math.sqrt(p.params.curve.values[0])
            ref = bs_barrier(k, p.s, 100, B, p.T, sigma, r, q)
            exact = float(singular_barrier_f2(_const(0.0, 1), _const(1.0, 1), _state([p]), k.eta, exact=True).val)
            approx = float(singular_barrier_f2(_const(0.0, 1), _const(1.0, 1), _state([p]), k.eta).val)
            assert exact == pytest.approx(ref, abs=1e-9)
            assert abs(approx - ref) <= 1e-2 * (math.exp(p.s) + 100)

    def test_f2_maturity_limit_below_barrier(self):
        for B in (90.0, 120.0):
            for s in np.log([60.0, 80.0, 85.0]):
                p = make_point(kind="up-in-put", s=s, B=B, t=1 - 1e-10, T=1.0)
                val = float(singular_barrier_f2(_const(0.1, 1), _const(1.0, 1), _state([p]), -1).val)
                assert abs(val) <= 1e-6 * math.exp(s)

    def test_f21_vanishes_when_barrier_above_strike(self):
        # up-in put with B > K: only the reflected component remains
        p = make_point(kind="up-in-put", s=math.log(80), B=120, T=1.0, r=0.02)
        st = _state([p])
        full = float(singular_barrier_f2(_const(0.0, 1), _const(1.0, 1), st, -1, exact=True).val)
        sigma = math.sqrt(0.04)
        ln_b = math.log(120)
        refl = bs_vanilla(2 * ln_b - p.s, 100, 1.0, sigma, 0.02, 0.0, -1)
        power = math.exp((p.s - ln_b) * (1 - 2 * 0.02 / sigma**2))
        assert full == pytest.approx(refl * power, abs=1e-10)

    def test_f2_rejects_zero_vol(self):
        p = make_point(kind="up-in-put", s=math.log(80), B=95, T=1.0, xi=0.0)
        X = torch.as_tensor(p.to_vector()[None, :], dtype=DTYPE)
        with pytest.raises(ValueError):
            State.from_points(X, "constant", False)


class TestArchitectures:
    def test_vanilla_zero_weights_collapse(self):
        net = VanillaNet(seed=None)
        with torch.no_grad():
            net.b_out.fill_(0.7)
            net.b_beta.fill_(0.05)
            net.b_gamma.fill_(0.3)
        p = make_point(s=math.log(110), T=0.8, xi=0.05)
        st = _state([p])
        expect = 0.7 + float(singular_vanilla(_const(0.05, 1), _const(math.log1p(math.exp(0.3)), 1), st, 1).val)
        assert float(net.predict(p.to_vector()[None, :])[0]) == pytest.approx(expect, abs=1e-12)

    def test_vanilla_maturity_decomposition(self):
        net = VanillaNet(seed=3)
        p = make_point(s=math.log(130), t=1.0, T=1.0)
        parts = {}
        out = net.forward_jet(torch.as_tensor(p.to_vector()[None, :]), derivs=False, parts=parts)
        assert float(out.val.detach() - 30.0) == pytest.approx(float(parts["smooth"].val.detach()), abs=1e-12)

    def test_barrier_tail_zero(self):
        net = BarrierNet("down-in-put", seed=2)
        with torch.no_grad():
            net.w_out.zero_()
            net.b_out.fill_(1.25)
        X = np.stack([make_point(kind="down-in-put", s=math.log(s), B=90).to_vector() for s in (95, 120)])
        np.testing.assert_array_equal(net.predict(X), [1.25, 1.25])

    def test_barrier_sensitivity_to_singular_slot(self):
        rng = np.random.default_rng(0)
        for seed in range(100):
            net = BarrierNet("up-in-call", seed=seed, width=16)
            j = net.l1
            W = net.weights[j]
            X = torch.as_tensor(make_point(kind="up-in-call", s=rng.uniform(4.0, 4.7), B=120).to_vector()[None, :])
            with torch.no_grad():
                base = net.forward(X)
                W[:, -1] += 1e-3
                assert abs(float(net.forward(X) - base)) > 0

    def test_shapes(self):
        v = VanillaNet(n_layers=5, width=8, curve_mode="nine-segment")
        assert v.n0 == 24 and v.weights[0].shape == (8, 24) and len(v.w_skip) == 6
        b = BarrierNet("up-in-put", l1=3, l2=2, width=8)
        assert b.weights[3].shape == (8, 9) and len(b.weights) == 5

    def test_kind_checks(self):
        with pytest.raises(ValueError):
            VanillaNet("up-in-call")
        with pytest.raises(ValueError):
            BarrierNet("up-out-call")
        with pytest.raises(ValueError):
            VanillaNet().predict(np.zeros((3, 24)))

    def test_no_nan_over_training_box(self, train_batch):
        for kind in ("call",) + tuple(k.value for k in KNOCK_IN_KINDS):
            k = OptionKind.parse(kind)
            net = VanillaNet(k) if not k.is_barrier else BarrierNet(k)
            batch = train_batch(kind, n=2000, seed=5)
            jet = net.forward_jet(torch.as_tensor(batch.X), derivs=True, check=True)
            assert torch.isfinite(jet.d2).all()


def _random_points(kind, n, seed, curve_mode="constant"):
    from bergomi_pinn.sampler import SamplingConfig, batch_for_index

    return batch_for_index(SamplingConfig(kind=kind, curve_mode=curve_mode, seed=seed, count=n), 0)


class TestDerivatives:
    def test_vanilla_partials(self):
        net = VanillaNet(width=32, seed=1)
        errs = check_partials(net, _random_points("call", 50, 1).X)
        assert max(errs.values()) <= 1e-5, errs

    @pytest.mark.parametrize("kind", [k.value for k in KNOCK_IN_KINDS])
    def test_barrier_partials(self, kind):
        net = BarrierNet(kind, width=32, seed=2)
        errs = check_partials(net, _random_points(kind, 50, 2).X)
        assert max(errs.values()) <= 1e-5, errs

    def test_barrier_partials_near_maturity(self):
        net = BarrierNet("up-in-put", width=32, seed=4)
        batch = _random_points("up-in-put", 50, 4)
        X = batch.replace(t=batch.T - 1e-4).X
        errs = check_partials(net, X, skip=("t",))
        assert max(errs.values()) <= 1e-4, errs

    def test_weight_gradients(self):
        batch = _random_points("call", 32, 6)
        net = VanillaNet(width=16, seed=6)
        errs = weight_gradient_errors(net, lambda: loss_vanilla(net, batch))
        assert max(errs) <= 1e-4, errs
        vnet = VanillaNet("put", width=16, seed=7)
        bnet = BarrierNet("up-in-put", width=16, seed=8)
        bb = _random_points("up-in-put", 32, 8)
        errs = weight_gradient_errors(bnet, lambda: loss_knock_in(bnet, vnet, bb))
        assert max(errs) <= 1e-4, errs


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        for net in (VanillaNet(width=8, seed=3), BarrierNet("down-in-call", width=8, seed=4, curve_mode="nine-segment")):
            path = tmp_path / "net.ckpt"
            save_checkpoint(path, net, {"note": "x"})
            loaded, extra = load_checkpoint(path)
            assert extra == {"note": "x"}
            assert torch.equal(loaded.flat_parameters(), net.flat_parameters())
            assert checkpoint_bytes(loaded, extra) == path.read_bytes()
            assert loaded.encoding == net.encoding

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_truncated(self, tmp_path):
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, VanillaNet(width=8))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_encoding_golden_values():
    enc = InputEncoding.default("constant")
    # s spans [ln 5, ln 2000]; T spans [0, 3]; xi spans [0.05^2, 0.5^2]
    assert enc.center[0] == pytest.approx(0.5 * (math.log(5) + math.log(2000)))
    assert enc.scale[4] == pytest.approx(1.5)
    assert enc.center[8] == pytest.approx(0.5 * (0.0025 + 0.25))
    X = PointBatch(make_point().to_vector()[None, :]).X
    c, s = enc.tensors()
    decoded = ((torch.as_tensor(X) - c) / s) * s + c
    torch.testing.assert_close(decoded, torch.as_tensor(X), rtol=0, atol=1e-13)
