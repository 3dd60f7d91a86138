"""Forward-mode second-order derivative propagation ("jets") on torch tensors.

A :class:`Jet` carries a value together with its first derivatives in the
four state variables ``(t, s, x1, x2)`` and the six second derivatives the
pricing PDE needs, all pairs within ``(s, x1, x2)``. Elementary operations
apply the chain rule explicitly, so a network evaluated on jets yields every
PDE partial in one batched forward pass. The tensors stay on the torch
autograd graph: gradients of any loss built from them with respect to the
network weights come from ordinary ``backward()``.

A jet with ``d1 is None`` is value-only and skips all derivative work.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch

DTYPE = torch.float64
VARS = ("t", "s", "x1", "x2")
# second-order pairs, as indices into VARS
PAIRS = ((1, 1), (2, 2), (3, 3), (1, 2), (1, 3), (2, 3))
PAIR_NAMES = ("ss", "x1x1", "x2x2", "sx1", "sx2", "x1x2")
_I = torch.tensor([p[0] for p in PAIRS])
_J = torch.tensor([p[1] for p in PAIRS])


class NumericError(FloatingPointError):
    """Non-finite value met during a forward pass."""


def sigmoid(z):
    f = torch.sigmoid(z)
    return f, f * (1 - f), f * (1 - f) * (1 - 2 * f)


def silu(z):
    sg = torch.sigmoid(z)
    ds = sg * (1 - sg)
    return z * sg, sg + z * ds, ds * (2 + z * (1 - 2 * sg))


def softplus(z):
    sg = torch.sigmoid(z)
    return torch.nn.functional.softplus(z), sg, sg * (1 - sg)


ACTIVATIONS: dict[str, Callable] = {"sigmoid": sigmoid, "silu": silu, "softplus": softplus}


def activations(z, name: str = "silu"):
    """Value, first and second derivative of a smooth activation."""
    z = torch.as_tensor(z, dtype=DTYPE)
    return ACTIVATIONS[name](z)


def _pair_outer(a, b):
    """Symmetrized products a_i b_j + a_j b_i over PAIRS, halved on the diagonal."""
    ai, aj = a[..., _I], a[..., _J]
    bi, bj = b[..., _I], b[..., _J]
    return 0.5 * (ai * bj + aj * bi)


class Jet:
    __slots__ = ("val", "d1", "d2")

    def __init__(self, val, d1=None, d2=None):
        self.val = val
        self.d1 = d1
        self.d2 = d2

    # construction -------------------------------------------------------

    @staticmethod
    def const(val, like: "Jet | None" = None) -> "Jet":
        val = torch.as_tensor(val, dtype=DTYPE)
        if like is None or like.d1 is None:
            return Jet(val)
        shape = torch.broadcast_shapes(val.shape, like.val.shape)
        val = val.expand(shape)
        return Jet(val, val.new_zeros(shape + (4,)), val.new_zeros(shape + (6,)))

    @staticmethod
    def variable(val, index: int, scale: float = 1.0, derivs: bool = True) -> "Jet":
        """Independent variable ``VARS[index]`` (``scale`` is d(val)/d(variable))."""
        val = torch.as_tensor(val, dtype=DTYPE)
        if not derivs:
            return Jet(val)
        d1 = val.new_zeros(val.shape + (4,))
        d1[..., index] = scale
        return Jet(val, d1, val.new_zeros(val.shape + (6,)))

    @property
    def has_derivs(self) -> bool:
        return self.d1 is not None

    # elementwise algebra ------------------------------------------------

    def _coerce(self, other) -> "Jet":
        return other if isinstance(other, Jet) else Jet.const(other, self)

    def __add__(self, other):
        other = self._coerce(other)
        if self.d1 is None or other.d1 is None:
            return Jet(self.val + other.val) if self.d1 is None and other.d1 is None else _mixed(self, other, torch.add)
        return Jet(self.val + other.val, self.d1 + other.d1, self.d2 + other.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.val, None if self.d1 is None else -self.d1, None if self.d2 is None else -self.d2)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            c = torch.as_tensor(other, dtype=DTYPE)
            if self.d1 is None:
                return Jet(self.val * c)
            return Jet(self.val * c, self.d1 * c[..., None], self.d2 * c[..., None])
        if self.d1 is None and other.d1 is None:
            return Jet(self.val * other.val)
        a, b = _lift(self, other), _lift(other, self)
        u, v = a.val[..., None], b.val[..., None]
        return Jet(
            a.val * b.val,
            u * b.d1 + v * a.d1,
            u * b.d2 + v * a.d2 + 2 * _pair_outer(a.d1, b.d1),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / torch.as_tensor(other, dtype=DTYPE))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def apply(self, f0, f1, f2) -> "Jet":
        """Chain rule for a scalar function with value f0, f'=f1, f''=f2 at self.val."""
        if self.d1 is None:
            return Jet(f0)
        g1, g2 = f1[..., None], f2[..., None]
        return Jet(f0, g1 * self.d1, g1 * self.d2 + g2 * _pair_outer(self.d1, self.d1))

    def reciprocal(self):
        inv = 1.0 / self.val
        return self.apply(inv, -inv * inv, 2 * inv * inv * inv)

    def exp(self):
        e = torch.exp(self.val)
        return self.apply(e, e, e)

    def log(self):
        inv = 1.0 / self.val
        return self.apply(torch.log(self.val), inv, -inv * inv)

    def sqrt(self):
        r = torch.sqrt(self.val)
        return self.apply(r, 0.5 / r, -0.25 / (r * self.val))

    def square(self):
        return self.apply(self.val**2, 2 * self.val, torch.full_like(self.val, 2.0))

    def cube(self):
        v = self.val
        return self.apply(v**3, 3 * v * v, 6 * v)

    def activation(self, name: str) -> "Jet":
        return self.apply(*ACTIVATIONS[name](self.val))

    def sigmoid(self):
        return self.activation("sigmoid")

    def silu(self):
        return self.activation("silu")

    def softplus(self):
        return self.activation("softplus")

    # structural ops on feature jets (val shape (..., n)) -----------------

    def linear(self, weight, bias=None) -> "Jet":
        """``x @ W.T + b`` over the last (feature) axis."""
        val = self.val @ weight.T
        if bias is not None:
            val = val + bias
        if self.d1 is None:
            return Jet(val)
        d1 = torch.einsum("...nk,mn->...mk", self.d1, weight)
        d2 = torch.einsum("...nk,mn->...mk", self.d2, weight)
        return Jet(val, d1, d2)

    def squeeze(self, dim: int = -1) -> "Jet":
        if self.d1 is None:
            return Jet(self.val.squeeze(dim))
        return Jet(self.val.squeeze(dim), self.d1.squeeze(dim - 1), self.d2.squeeze(dim - 1))

    def unsqueeze(self, dim: int = -1) -> "Jet":
        if self.d1 is None:
            return Jet(self.val.unsqueeze(dim))
        return Jet(self.val.unsqueeze(dim), self.d1.unsqueeze(dim - 1), self.d2.unsqueeze(dim - 1))

    @staticmethod
    def cat(jets, dim: int = -1) -> "Jet":
        if any(j.d1 is None for j in jets):
            return Jet(torch.cat([j.val for j in jets], dim))
        return Jet(
            torch.cat([j.val for j in jets], dim),
            torch.cat([j.d1 for j in jets], dim - 1),
            torch.cat([j.d2 for j in jets], dim - 1),
        )

    @staticmethod
    def where(cond, a: "Jet", b: "Jet") -> "Jet":
        if a.d1 is None and b.d1 is None:
            return Jet(torch.where(cond, a.val, b.val))
        a, b = _lift(a, b), _lift(b, a)
        c = cond[..., None]
        return Jet(torch.where(cond, a.val, b.val), torch.where(c, a.d1, b.d1), torch.where(c, a.d2, b.d2))

    def check_finite(self, where: str) -> "Jet":
        for name, x in (("value", self.val), ("d1", self.d1), ("d2", self.d2)):
            if x is not None and not torch.isfinite(x).all():
                raise NumericError(f"non-finite {name} at {where}")
        return self


def _lift(a: Jet, b: Jet) -> Jet:
    """Give a value-only jet zero derivatives shaped like ``b``'s."""
    if a.d1 is not None or b.d1 is None:
        return a
    shape = torch.broadcast_shapes(a.val.shape, b.val.shape)
    val = a.val.expand(shape)
    return Jet(val, val.new_zeros(shape + (4,)), val.new_zeros(shape + (6,)))


def _mixed(a: Jet, b: Jet, op) -> Jet:
    a, b = _lift(a, b), _lift(b, a)
    return Jet(op(a.val, b.val), op(a.d1, b.d1), op(a.d2, b.d2))


@dataclass
class DerivBundle:
    """Value and PDE partials of a scalar function, batched over points."""

    value: torch.Tensor
    dt: torch.Tensor
    ds: torch.Tensor
    dx1: torch.Tensor
    dx2: torch.Tensor
    dss: torch.Tensor
    dx1x1: torch.Tensor
    dx2x2: torch.Tensor
    dsx1: torch.Tensor
    dsx2: torch.Tensor
    dx1x2: torch.Tensor

    @classmethod
    def from_jet(cls, jet: Jet) -> "DerivBundle":
        if jet.d1 is None:
            raise ValueError("jet carries no derivatives")
        d1, d2 = jet.d1, jet.d2
        return cls(jet.val, d1[..., 0], d1[..., 1], d1[..., 2], d1[..., 3], *(d2[..., k] for k in range(6)))

    def hessian(self) -> torch.Tensor:
        """``(..., 3, 3)`` symmetric Hessian in (s, x1, x2)."""
        rows = [
            [self.dss, self.dsx1, self.dsx2],
            [self.dsx1, self.dx1x1, self.dx1x2],
            [self.dsx2, self.dx1x2, self.dx2x2],
        ]
        return torch.stack([torch.stack(r, -1) for r in rows], -2)


def eval_with_derivs(fn: Callable[[Jet, Jet, Jet, Jet], Jet], t, s, x1, x2) -> DerivBundle:
    """Evaluate ``fn(t, s, x1, x2)`` on seeded jets and collect all PDE partials."""
    jets = [Jet.variable(v, i) for i, v in enumerate((t, s, x1, x2))]
    out = fn(*jets)
    out.check_finite("output")
    return DerivBundle.from_jet(out)


def weight_gradient(loss: torch.Tensor, params) -> torch.Tensor:
    """Flat gradient of a scalar loss with respect to ``params``."""
    grads = torch.autograd.grad(loss, list(params), allow_unused=True)
    return torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)
    ])
