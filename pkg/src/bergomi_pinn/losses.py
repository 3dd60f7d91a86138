"""PDE residual and the per-sample loss functions for vanilla and knock-in networks.

Boundary terms re-evaluate the network on modified copies of each sampled
point (``s``, ``t`` or the factors overridden); the sampled batch itself is
never changed. Residuals are taken as ``V - target`` with the targets of
the vanilla boundary table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .autodiff import DTYPE, DerivBundle
from .bergomi import STRIKE, ParamPoint, PointBatch, boundary_estimate_batch, x_bound, xi_inst_batch
from .options import OptionKind


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.01
    lambda2: float = 25.0
    h_floor: float = 0.25

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.h_floor) <= 0:
            raise ValueError("loss weights must be positive")


def _as_batch(points) -> PointBatch:
    if isinstance(points, PointBatch):
        return points
    if isinstance(points, ParamPoint):
        return PointBatch(points.to_vector()[None, :], points.curve_mode)
    return PointBatch(np.asarray(points, dtype=float))


def _t(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def pde_residual(bundle: DerivBundle, points) -> torch.Tensor:
    """Pricing-PDE residual H at each point from the network's partials."""
    batch = _as_batch(points)
    if np.any(batch.tau <= 0):
        raise ValueError("the PDE residual is undefined at t = T")
    var = _t(xi_inst_batch(batch))
    vol = torch.sqrt(var)
    r, q = _t(batch.r), _t(batch.q)
    k1, k2 = _t(batch.k1), _t(batch.k2)
    x1, x2 = _t(batch.x1), _t(batch.x2)
    rho1, rho2, rho12 = _t(batch.rho1), _t(batch.rho2), _t(batch.rho12)
    b = bundle
    return (
        b.dt
        - r * b.value
        + (r - q - 0.5 * var) * b.ds
        - k1 * x1 * b.dx1
        - k2 * x2 * b.dx2
        + 0.5 * var * b.dss
        + 0.5 * b.dx1x1
        + 0.5 * b.dx2x2
        + rho1 * vol * b.dsx1
        + rho2 * vol * b.dsx2
        + rho12 * b.dx1x2
    )


def phi_weight(s, strike: float = STRIKE):
    """Damping weight min(1, 4K^2 e^{-2s}) for the exponentially growing call values."""
    s = np.asarray(s, dtype=float) if not torch.is_tensor(s) else s
    if torch.is_tensor(s):
        return torch.clamp(4 * strike**2 * torch.exp(-2 * s), max=1.0)
    out = np.minimum(1.0, 4 * strike**2 * np.exp(-2 * s))
    return out[()] if out.ndim == 0 else out


def _network_partials(net, batch: PointBatch):
    X = _t(batch.X)
    jet = net.forward_jet(X, derivs=True)
    return DerivBundle.from_jet(jet)


def _values(net, batches):
    """One value-only forward over several modified copies, split back apart."""
    X = torch.cat([_t(b.X) for b in batches])
    out = net.forward_jet(X, derivs=False).val
    return torch.split(out, [len(b) for b in batches])


def vanilla_loss_terms(net, points, cfg: LossConfig = LossConfig(), kind=None) -> dict:
    """Per-point weighted squared residuals of the vanilla loss, keyed by term."""
    batch = _as_batch(points)
    kind = OptionKind.parse(kind or net.kind)
    if kind.is_barrier:
        raise ValueError("vanilla loss requires a vanilla kind")
    K = net.strike
    s_m, s_M = math.log(K / 20), math.log(20 * K)
    tau = _t(batch.tau)
    r, q, s = _t(batch.r), _t(batch.q), _t(batch.s)
    b1, b2 = x_bound(batch.k1), x_bound(batch.k2)

    bundle = _network_partials(net, batch)
    H = pde_residual(bundle, batch)

    at_T = batch.replace(t=batch.T)
    low = batch.replace(s=s_m)
    high = batch.replace(s=s_M)
    x_low = batch.replace(x1=-b1, x2=-b2)
    x_high = batch.replace(x1=b1, x2=b2)
    v_T, v_low, v_high, v_xl, v_xh = _values(net, [at_T, low, high, x_low, x_high])
    est_low = _t(boundary_estimate_batch(x_low, kind.eta, strike=K))
    est_high = _t(boundary_estimate_batch(x_high, kind.eta, strike=K))

    disc_r = torch.exp(-r * tau)
    if kind.eta == 1:
        phi = phi_weight(s, K)
        phi_M = phi_weight(s_M, K)
        return {
            "pde": phi * H**2,
            "initial": phi * (v_T - torch.clamp(torch.exp(s) - K, min=0.0)) ** 2,
            "lower": v_low**2,
            "upper": phi_M * (v_high - (torch.exp(s_M - q * tau) - K * disc_r)) ** 2,
            "vol_low": cfg.lambda1 * phi * (v_xl - est_low) ** 2,
            "vol_high": cfg.lambda1 * phi * (v_xh - est_high) ** 2,
        }
    return {
        "pde": H**2,
        "initial": (v_T - torch.clamp(K - torch.exp(s), min=0.0)) ** 2,
        "lower": (v_low - (K * disc_r - torch.exp(s_m - q * tau))) ** 2,
        "upper": v_high**2,
        "vol_low": cfg.lambda1 * (v_xl - est_low) ** 2,
        "vol_high": cfg.lambda1 * (v_xh - est_high) ** 2,
    }


def knock_in_loss_terms(net, vanilla_net, points, cfg: LossConfig = LossConfig(), kind=None) -> dict:
    """Per-point weighted squared residuals of a knock-in loss.

    The vanilla network is evaluated without gradient tracking.
    """
    batch = _as_batch(points)
    kind = OptionKind.parse(kind or net.kind)
    if not kind.is_knock_in:
        raise ValueError("knock-in loss requires a knock-in kind")
    if vanilla_net.kind != kind.vanilla:
        raise ValueError(f"{kind} needs the {kind.vanilla} network, got {vanilla_net.kind}")
    K = net.strike
    far_s = math.log(K / 20) if kind.is_up else math.log(20 * K)

    bundle = _network_partials(net, batch)
    H = pde_residual(bundle, batch)
    at_T = batch.replace(t=batch.T)
    far = batch.replace(s=far_s)
    at_b = batch.replace(s=np.log(batch.B))
    v_T, v_far, v_b = _values(net, [at_T, far, at_b])
    with torch.no_grad():
        vanilla_b = vanilla_net.forward_jet(_t(at_b.X), derivs=False).val
    return {
        "pde": H**2,
        "initial": cfg.lambda2 * v_T**2,
        "far": v_far**2,
        "barrier": (v_b - vanilla_b) ** 2,
    }


def total_loss(terms: dict) -> torch.Tensor:
    """Batch average of the per-point losses."""
    per_point = torch.stack(list(terms.values())).sum(0)
    return per_point.mean()


def loss_vanilla(net, points, cfg: LossConfig = LossConfig(), kind=None) -> torch.Tensor:
    return total_loss(vanilla_loss_terms(net, points, cfg, kind))


def loss_knock_in(net, vanilla_net, points, cfg: LossConfig = LossConfig(), kind=None) -> torch.Tensor:
    return total_loss(knock_in_loss_terms(net, vanilla_net, points, cfg, kind))
