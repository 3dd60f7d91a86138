"""Finite-difference oracles shared by the network and acceptance tests."""

import numpy as np
import torch

from bergomi_pinn.autodiff import DTYPE, DerivBundle

# raw column index and jet variable name for the four state variables
STATE_COLS = {"t": 1, "s": 0, "x1": 2, "x2": 3}
SECOND = {"dss": ("s", "s"), "dx1x1": ("x1", "x1"), "dx2x2": ("x2", "x2"),
          "dsx1": ("s", "x1"), "dsx2": ("s", "x2"), "dx1x2": ("x1", "x2")}


def _shift(X, col, h):
    Y = X.clone()
    Y[:, col] += h
    return Y


def fd_partials(fn, X: torch.Tensor, steps: dict, skip=()) -> dict:
    """Central differences of ``fn(X, derivs)`` (returning a DerivBundle-able jet).

    First derivatives difference the value; second derivatives difference the
    jet's own first derivatives, the usual way to check a Hessian.
    """
    out = {}
    for var, col in STATE_COLS.items():
        if var in skip:
            continue
        h = steps[var]
        vp = fn(_shift(X, col, h), False).val
        vm = fn(_shift(X, col, -h), False).val
        out["d" + var] = (vp - vm) / (2 * h)
    for name, (a, b) in SECOND.items():
        h = steps[b]
        bp = DerivBundle.from_jet(fn(_shift(X, STATE_COLS[b], h), True))
        bm = DerivBundle.from_jet(fn(_shift(X, STATE_COLS[b], -h), True))
        out[name] = (getattr(bp, "d" + a) - getattr(bm, "d" + a)) / (2 * h)
    return out


def max_rel_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1.0) -> float:
    return float(torch.max(torch.abs(a - b) / torch.clamp(torch.abs(b), min=floor)))


def check_partials(net, X, skip=(), floor=1.0, rel_step=1e-5):
    """Worst relative error of every network partial against finite differences.

    Steps start at ``rel_step`` times each input's range. The barrier terms
    are steep near the barrier: a 1e-4 step already costs 1e-4 in truncation
    error, 1e-5 keeps it near 1e-6. Close to maturity the price varies on the
    scale ``tau`` in t and ``sqrt(tau)`` in s, so the steps shrink with the
    time to maturity of each point.
    """
    X = torch.as_tensor(X, dtype=DTYPE)
    scale = net.encoding.scale
    tau = X[:, 4] - X[:, 1]
    steps = {var: torch.full_like(tau, rel_step * scale[col]) for var, col in STATE_COLS.items()}
    steps["t"] = torch.minimum(steps["t"], 1e-3 * tau)
    steps["s"] = torch.minimum(steps["s"], 1e-3 * tau.sqrt())
    with torch.no_grad():
        bundle = DerivBundle.from_jet(net.forward_jet(X, derivs=True))
        fd = fd_partials(lambda Y, d: net.forward_jet(Y, derivs=d), X, steps, skip)
    return {name: max_rel_error(getattr(bundle, name), ref, floor) for name, ref in fd.items()}


def weight_gradient_errors(net, loss_fn, n=20, seed=0, h=1e-3):
    """Relative errors of autograd weight gradients against finite differences on ``n`` random weights.

    The loss sums many terms, so it carries rounding noise near 1e-16 times
    its size. With h = 1e-6 that noise alone reaches 1e-3 relative error on
    the small gradient components. A fourth-order stencil at h = 1e-3 keeps
    truncation below 1e-9 and makes rounding negligible.
    """
    params = list(net.parameters())
    grads = torch.autograd.grad(loss_fn(), params)
    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    errors = []
    for _ in range(n):
        k = rng.choice(len(params), p=sizes / sizes.sum())
        j = rng.integers(params[k].numel())
        flat = params[k].data.view(-1)
        orig = flat[j].item()

        def at(d):
            flat[j] = orig + d
            return float(loss_fn())

        with torch.no_grad():
            fd = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h)
            flat[j] = orig
        g = float(grads[k].view(-1)[j])
        errors.append(abs(g - fd) / max(abs(fd), 1e-6))
    return errors
