"""Pricing networks with embedded singular terms.

``VanillaNet`` adds a Black-Scholes-shaped singular term, driven by two
trainable heads (drift ``beta`` and volatility multiplier ``gamma``), to a
smooth MLP output with skip connections from every layer. ``BarrierNet``
builds the barrier singular term from a middle layer, concatenates it to
that layer and lets the remaining layers mix it in.

Networks consume raw points (``bergomi.columns`` order) as float64 tensors,
standardize them internally and can be evaluated either on plain values or
on jets carrying the PDE derivatives.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .autodiff import DTYPE, Jet
from .bergomi import STRIKE, PointBatch, avg_variance, avg_variance_dt, columns, curve_nodes, x_bound
from .options import OptionKind
from .sampler import RANGES

_CDF_SLOPE = 2.0 * math.sqrt(2.0 / math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
SOFTPLUS_INV_ONE = math.log(math.e - 1.0)


# ---------------------------------------------------------------------------
# input encoding


@dataclass(frozen=True)
class InputEncoding:
    """Affine map of each raw input column onto roughly [-1, 1]."""

    curve_mode: str
    center: tuple
    scale: tuple

    @classmethod
    def default(cls, curve_mode: str, strike: float = STRIKE) -> "InputEncoding":
        spans = {
            "s": (math.log(strike / 20), math.log(20 * strike)),
            "t": RANGES["T"],
            "x1": (-float(x_bound(0.1)), float(x_bound(0.1))),
            "x2": (-float(x_bound(2.0)), float(x_bound(2.0))),
            "B": (strike / 1.5, 1.5 * strike),
            "rho12": (-1.0, 1.0),
        }
        center, scale = [], []
        for name in columns(curve_mode):
            key = "xi" if name.startswith("xi") else name
            lo, hi = spans.get(key) or RANGES[key]
            center.append(0.5 * (lo + hi))
            scale.append(0.5 * (hi - lo))
        return cls(curve_mode, tuple(center), tuple(scale))

    @property
    def n_inputs(self) -> int:
        return len(self.center)

    def tensors(self):
        return torch.tensor(self.center, dtype=DTYPE), torch.tensor(self.scale, dtype=DTYPE)


def _encoded_input(X: torch.Tensor, encoding: InputEncoding, derivs: bool) -> Jet:
    center, scale = encoding.tensors()
    val = (X - center) / scale
    if not derivs:
        return Jet(val)
    d1 = val.new_zeros(val.shape + (4,))
    # columns 0..3 are s, t, x1, x2; jet variables are ordered t, s, x1, x2
    for col, var in ((0, 1), (1, 0), (2, 2), (3, 3)):
        d1[:, col, var] = 1.0 / scale[col]
    return Jet(val, d1, val.new_zeros(val.shape + (6,)))


# ---------------------------------------------------------------------------
# state jets shared by the singular terms


@dataclass
class State:
    """Raw-coordinate jets and constants needed by the singular terms."""

    s: Jet
    tau: Jet
    sigma_bar: Jet
    r: torch.Tensor
    q: torch.Tensor
    ln_b: torch.Tensor
    at_maturity: torch.Tensor

    @classmethod
    def from_points(cls, X: torch.Tensor, curve_mode: str, derivs: bool) -> "State":
        batch = PointBatch(X.detach().cpu().numpy(), curve_mode)
        tau_np = batch.tau
        var = avg_variance(batch.nodes, batch.xi, batch.t, batch.T)
        if np.any(var <= 0):
            raise ValueError("average forward variance must be positive")
        sig = torch.as_tensor(np.sqrt(var), dtype=DTYPE)
        s = Jet.variable(X[:, 0], 1, derivs=derivs)
        tau = Jet.variable(X[:, 4] - X[:, 1], 0, scale=-1.0, derivs=derivs)
        if derivs:
            dvar = torch.as_tensor(avg_variance_dt(batch.nodes, batch.xi, batch.t, batch.T), dtype=DTYPE)
            sigma_bar = Jet.variable(sig, 0, derivs=True)
            sigma_bar.d1[..., 0] = 0.5 * dvar / sig
        else:
            sigma_bar = Jet(sig)
        return cls(
            s=s,
            tau=tau,
            sigma_bar=sigma_bar,
            r=X[:, 6],
            q=X[:, 7],
            ln_b=torch.log(X[:, 5]),
            at_maturity=torch.as_tensor(tau_np <= 0),
        )


def norm_cdf_jet(z: Jet, exact: bool = False) -> Jet:
    """Normal CDF on a jet: sigmoid approximation by default, erf-based if ``exact``."""
    if exact:
        pdf = torch.exp(-0.5 * z.val**2) * _INV_SQRT_2PI
        return z.apply(torch.special.ndtr(z.val), pdf, -z.val * pdf)
    return ((z + 0.044715 * z.cube()) * _CDF_SLOPE).sigmoid()


def _limit_cdf(x: torch.Tensor) -> torch.Tensor:
    return torch.where(x > 0, 1.0, torch.where(x < 0, 0.0, 0.5)).to(DTYPE)


def _safe_tau(state: State) -> Jet:
    tau = state.tau
    safe_val = torch.where(state.at_maturity, torch.ones_like(tau.val), tau.val)
    return Jet(safe_val, tau.d1, tau.d2)


def _bs_like(eta: int, log_spot: Jet, cash, h: Jet, v: Jet, tau: Jet, state: State, exact: bool) -> Jet:
    """eta e^{x-q tau} N(eta(h/v + v/2)) - eta C e^{-r tau} N(eta(h/v - v/2))."""
    hv = h / v
    n1 = norm_cdf_jet((hv + v * 0.5) * eta, exact)
    n2 = norm_cdf_jet((hv - v * 0.5) * eta, exact)
    spot = (log_spot - tau * state.q).exp()
    bond = (tau * (-state.r)).exp() * cash
    return spot * n1 * eta - bond * n2 * eta


def _bs_like_limit(eta: int, log_spot, cash, h0) -> torch.Tensor:
    """Value of :func:`_bs_like` as tau -> 0 with h -> h0."""
    n = _limit_cdf(eta * h0)
    return eta * (torch.exp(log_spot) - cash) * n


def singular_vanilla(beta: Jet, gamma: Jet, state: State, eta: int, strike: float = STRIKE, exact: bool = False) -> Jet:
    """Black-Scholes-shaped term whose tau -> 0 limit is the vanilla payoff."""
    tau = _safe_tau(state)
    h = state.s - math.log(strike) + beta * tau
    v = gamma * state.sigma_bar * tau.sqrt()
    alpha = _bs_like(eta, state.s, strike, h, v, tau, state, exact)
    payoff = torch.clamp(eta * (torch.exp(state.s.val) - strike), min=0.0)
    return Jet.where(state.at_maturity, Jet.const(payoff, alpha), alpha)


def singular_barrier_f1(beta: Jet, gamma: Jet, state: State, zeta: int, exact: bool = False) -> Jet:
    """Smoothed barrier indicator N(zeta h_B / v); a step at ln B at maturity."""
    tau = _safe_tau(state)
    h_b = state.s - state.ln_b + (beta + (state.r - state.q)) * tau
    v = gamma * state.sigma_bar * tau.sqrt()
    out = norm_cdf_jet(h_b / v * zeta, exact)
    limit = _limit_cdf(zeta * (state.s.val - state.ln_b))
    return Jet.where(state.at_maturity, Jet.const(limit, out), out)


def singular_barrier_f2(beta: Jet, gamma: Jet, state: State, eta: int, strike: float = STRIKE, exact: bool = False) -> Jet:
    """Two-component barrier term shaped like the closed-form up-in put / down-in call."""
    if torch.any(state.sigma_bar.val <= 0):
        raise ValueError("F2 requires a positive average volatility")
    tau = _safe_tau(state)
    ln_k = math.log(strike)
    drift = (beta + (state.r - state.q)) * tau
    v = gamma * state.sigma_bar * tau.sqrt()
    s, ln_b = state.s, state.ln_b
    upper_strike = eta * (strike - torch.exp(ln_b)) < 0

    h_k = s - ln_k + drift
    h_b = s - ln_b + drift
    f21 = _bs_like(eta, s, strike, h_k, v, tau, state, exact) - _bs_like(eta, s, strike, h_b, v, tau, state, exact)
    f21 = Jet.where(upper_strike, f21, Jet.const(torch.zeros_like(s.val), f21))

    h_tilde_val = torch.where(upper_strike, ln_b - s.val, 2 * ln_b - s.val - ln_k)
    h_tilde = Jet.where(upper_strike, -s + ln_b + drift, -s + (2 * ln_b - ln_k) + drift)
    reflected = -s + 2 * ln_b
    f22 = _bs_like(eta, reflected, strike, h_tilde, v, tau, state, exact)
    power = (s - ln_b) * (1.0 - (state.sigma_bar.square().reciprocal() * (2.0 * (state.r - state.q))))
    out = f21 + f22 * power.exp()

    # tau -> 0 limit
    sig_val = state.sigma_bar.val
    f21_0 = _bs_like_limit(eta, s.val, strike, s.val - ln_k) - _bs_like_limit(eta, s.val, strike, s.val - ln_b)
    f21_0 = torch.where(upper_strike, f21_0, torch.zeros_like(f21_0))
    f22_0 = _bs_like_limit(eta, 2 * ln_b - s.val, strike, h_tilde_val)
    limit = f21_0 + f22_0 * torch.exp((s.val - ln_b) * (1.0 - 2.0 * (state.r - state.q) / sig_val**2))
    return Jet.where(state.at_maturity, Jet.const(limit, out), out)


# ---------------------------------------------------------------------------
# networks


def _uniform_(t: torch.Tensor, fan_in: int, gain: float, gen: torch.Generator):
    bound = gain * math.sqrt(3.0 / fan_in)
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=gen)
    return t


SILU_GAIN = math.sqrt(2.0)


class _PricingNet(nn.Module):
    arch = ""

    def __init__(self, kind, curve_mode: str, width: int, encoding: InputEncoding | None, strike: float):
        super().__init__()
        self.kind = OptionKind.parse(kind)
        self.curve_mode = curve_mode
        curve_nodes(curve_mode)
        self.width = int(width)
        self.strike = float(strike)
        self.encoding = encoding or InputEncoding.default(curve_mode, strike)
        self.n0 = self.encoding.n_inputs
        if self.n0 != len(columns(curve_mode)):
            raise ValueError("encoding width does not match the curve mode")

    def _param(self, *shape) -> nn.Parameter:
        return nn.Parameter(torch.zeros(*shape, dtype=DTYPE))

    def _check_input(self, X) -> torch.Tensor:
        X = torch.as_tensor(X, dtype=DTYPE)
        if X.ndim != 2 or X.shape[1] != self.n0:
            raise ValueError(f"expected input of shape (n, {self.n0}), got {tuple(X.shape)}")
        return X

    def forward_jet(self, X, derivs: bool = True, check: bool = False, parts: dict | None = None) -> Jet:
        raise NotImplementedError

    def forward(self, X) -> torch.Tensor:
        return self.forward_jet(X, derivs=False).val

    def predict(self, X) -> np.ndarray:
        with torch.no_grad():
            return self.forward(torch.as_tensor(np.asarray(X), dtype=DTYPE)).numpy()

    def descriptor(self) -> dict:
        raise NotImplementedError

    def flat_parameters(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])


class VanillaNet(_PricingNet):
    """``V = m(x) + alpha_v(x)`` with skip-connected smooth part ``m``."""

    arch = "vanilla"

    def __init__(self, kind=OptionKind.CALL, curve_mode: str = "constant", n_layers: int = 5, width: int = 64,
                 encoding: InputEncoding | None = None, strike: float = STRIKE, seed: int | None = 0):
        super().__init__(kind, curve_mode, width, encoding, strike)
        if self.kind.is_barrier:
            raise ValueError("VanillaNet prices vanilla kinds only")
        self.n_layers = int(n_layers)
        n, n0 = self.width, self.n0
        self.weights = nn.ParameterList([self._param(n, n0 if j == 0 else n) for j in range(self.n_layers)])
        self.biases = nn.ParameterList([self._param(n) for _ in range(self.n_layers)])
        self.w_beta, self.b_beta = self._param(1, n), self._param(1)
        self.w_gamma, self.b_gamma = self._param(1, n), self._param(1)
        self.w_skip = nn.ParameterList([self._param(1, n0 if j == 0 else n) for j in range(self.n_layers + 1)])
        self.b_out = self._param(1)
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(int(seed))
        for W in self.weights:
            _uniform_(W, W.shape[1], SILU_GAIN, gen)
        for w in (self.w_beta, self.w_gamma, *self.w_skip):
            _uniform_(w, w.shape[1], 0.1, gen)
        with torch.no_grad():
            for b in self.biases:
                b.zero_()
            self.b_beta.zero_()
            self.b_gamma.fill_(SOFTPLUS_INV_ONE)
            self.b_out.zero_()

    def forward_jet(self, X, derivs: bool = True, check: bool = False, parts: dict | None = None) -> Jet:
        X = self._check_input(X)
        x = _encoded_input(X, self.encoding, derivs)
        smooth = x.linear(self.w_skip[0])
        for j, (W, b) in enumerate(zip(self.weights, self.biases)):
            x = x.linear(W, b).silu()
            if check:
                x.check_finite(f"hidden layer {j + 1}")
            smooth = smooth + x.linear(self.w_skip[j + 1])
        smooth = (smooth + self.b_out).squeeze(-1)
        beta = x.linear(self.w_beta, self.b_beta).squeeze(-1)
        gamma = x.linear(self.w_gamma, self.b_gamma).squeeze(-1).softplus()
        state = State.from_points(X, self.curve_mode, derivs)
        alpha = singular_vanilla(beta, gamma, state, self.kind.eta, self.strike)
        out = smooth + alpha
        if check:
            out.check_finite("output")
        if parts is not None:
            parts.update(smooth=smooth, alpha=alpha, beta=beta, gamma=gamma)
        return out

    def descriptor(self) -> dict:
        return {"arch": self.arch, "kind": self.kind.value, "curve_mode": self.curve_mode,
                "n_layers": self.n_layers, "width": self.width}


class BarrierNet(_PricingNet):
    """Knock-in network with the barrier singular term concatenated after layer ``l1``."""

    arch = "barrier"

    def __init__(self, kind=OptionKind.UP_IN_CALL, curve_mode: str = "constant", l1: int = 3, l2: int = 2,
                 width: int = 64, encoding: InputEncoding | None = None, strike: float = STRIKE,
                 seed: int | None = 0):
        super().__init__(kind, curve_mode, width, encoding, strike)
        if not self.kind.is_knock_in:
            raise ValueError("BarrierNet prices knock-in kinds only; knock-outs come from in-out parity")
        if l1 < 1 or l2 < 1:
            raise ValueError("l1 and l2 must be at least 1")
        self.l1, self.l2 = int(l1), int(l2)
        n, n0 = self.width, self.n0
        shapes = []
        for j in range(self.l1 + self.l2):
            fan_in = n0 if j == 0 else (n + 1 if j == self.l1 else n)
            shapes.append((n, fan_in))
        self.weights = nn.ParameterList([self._param(*sh) for sh in shapes])
        self.biases = nn.ParameterList([self._param(n) for _ in shapes])
        self.w_beta, self.b_beta = self._param(1, n), self._param(1)
        self.w_gamma, self.b_gamma = self._param(1, n), self._param(1)
        self.w_out, self.b_out = self._param(1, n), self._param(1)
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(int(seed))
        for W in self.weights:
            _uniform_(W, W.shape[1], SILU_GAIN, gen)
        for w in (self.w_beta, self.w_gamma):
            _uniform_(w, w.shape[1], 0.1, gen)
        _uniform_(self.w_out, self.w_out.shape[1], 1.0, gen)
        with torch.no_grad():
            for b in self.biases:
                b.zero_()
            self.b_beta.zero_()
            self.b_gamma.fill_(SOFTPLUS_INV_ONE)
            self.b_out.zero_()

    def singular(self, beta: Jet, gamma: Jet, state: State, exact: bool = False) -> Jet:
        if self.kind.uses_f2:
            return singular_barrier_f2(beta, gamma, state, self.kind.eta, self.strike, exact)
        return singular_barrier_f1(beta, gamma, state, self.kind.zeta, exact)

    def forward_jet(self, X, derivs: bool = True, check: bool = False, parts: dict | None = None) -> Jet:
        X = self._check_input(X)
        x = _encoded_input(X, self.encoding, derivs)
        alpha = None
        for j, (W, b) in enumerate(zip(self.weights, self.biases)):
            if j == self.l1:
                beta = x.linear(self.w_beta, self.b_beta).squeeze(-1)
                gamma = x.linear(self.w_gamma, self.b_gamma).squeeze(-1).softplus()
                state = State.from_points(X, self.curve_mode, derivs)
                alpha = self.singular(beta, gamma, state)
                if parts is not None:
                    parts.update(alpha=alpha, beta=beta, gamma=gamma)
                x = Jet.cat([x, alpha.unsqueeze(-1)])
            x = x.linear(W, b).silu()
            if check:
                x.check_finite(f"hidden layer {j + 1}")
        out = x.linear(self.w_out, self.b_out).squeeze(-1)
        if check:
            out.check_finite("output")
        return out

    def descriptor(self) -> dict:
        return {"arch": self.arch, "kind": self.kind.value, "curve_mode": self.curve_mode,
                "l1": self.l1, "l2": self.l2, "width": self.width}


def build_network(descriptor: dict, encoding: InputEncoding | None = None, strike: float = STRIKE, seed=None):
    d = dict(descriptor)
    arch = d.pop("arch")
    if arch == "vanilla":
        return VanillaNet(d["kind"], d["curve_mode"], d["n_layers"], d["width"], encoding, strike, seed)
    if arch == "barrier":
        return BarrierNet(d["kind"], d["curve_mode"], d["l1"], d["l2"], d["width"], encoding, strike, seed)
    raise ValueError(f"unknown architecture {arch!r}")


# ---------------------------------------------------------------------------
# checkpoint file
#
# layout: MAGIC (8 bytes) | version u32 LE | header length u32 LE |
#         UTF-8 JSON header | float64 LE parameters, row-major, header order

MAGIC = b"BRGMPINN"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(net: _PricingNet, extra: dict | None = None) -> bytes:
    names, shapes, blobs = [], [], []
    for name, p in net.named_parameters():
        arr = p.detach().cpu().numpy().astype("<f8", copy=False)
        names.append(name)
        shapes.append(list(arr.shape))
        blobs.append(np.ascontiguousarray(arr).tobytes(order="C"))
    header = {
        "architecture": net.descriptor(),
        "n0": net.n0,
        "strike": net.strike,
        "encoding": {"center": list(net.encoding.center), "scale": list(net.encoding.scale)},
        "parameters": [[n, s] for n, s in zip(names, shapes)],
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(raw)) + raw + b"".join(blobs)


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, net: _PricingNet, extra: dict | None = None):
    atomic_write(path, checkpoint_bytes(net, extra))


def load_checkpoint(path) -> tuple[_PricingNet, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a pricing-network checkpoint")
    try:
        version, hlen = struct.unpack("<II", data[8:16])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
        arch = header["architecture"]
        enc = InputEncoding(arch["curve_mode"], tuple(header["encoding"]["center"]), tuple(header["encoding"]["scale"]))
        net = build_network(arch, enc, header["strike"], seed=None)
        offset = 16 + hlen
        params = dict(net.named_parameters())
        with torch.no_grad():
            for name, shape in header["parameters"]:
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
                offset += 8 * count
                params[name].copy_(torch.from_numpy(arr.astype(np.float64)))
    except CheckpointError:
        raise
    except (struct.error, UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing or missing parameter bytes")
    return net, header.get("extra", {})
