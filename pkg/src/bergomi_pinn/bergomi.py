"""Two-factor Bergomi model: forward variance curve, instantaneous variance,
averaged volatility, training domain bounds and the deterministic-factor
Black-Scholes estimate used on the volatility boundaries.

Batched functions take plain numpy arrays; the flat point layout shared by
the sampler, the networks and the CSV files is described by
:func:`columns`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .analytic import bs_vanilla
from .options import OptionKind

STRIKE = 100.0
MAX_MATURITY = 3.0
CONSTANT_NODES = (MAX_MATURITY,)
NINE_SEGMENT_NODES = (1 / 52, 1 / 26, 1 / 12, 1 / 6, 1 / 4, 1 / 2, 1.0, 2.0, 3.0)
CURVE_MODES = {"constant": CONSTANT_NODES, "nine-segment": NINE_SEGMENT_NODES}
SIMPSON_INTERVALS = 256


def curve_nodes(curve_mode: str) -> np.ndarray:
    try:
        return np.asarray(CURVE_MODES[curve_mode], dtype=float)
    except KeyError:
        raise ValueError(f"unknown curve mode {curve_mode!r}; expected one of {sorted(CURVE_MODES)}") from None


# ---------------------------------------------------------------------------
# step-function curve arithmetic, vectorized over samples


def curve_value(nodes, values, t):
    """Step value at ``t``; a node belongs to the segment on its left."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t > nodes[-1] * (1 + 1e-12)) or np.any(t < 0):
        raise ValueError(f"time outside curve support [0, {nodes[-1]}]")
    idx = np.minimum(np.searchsorted(nodes, t, side="left"), len(nodes) - 1)
    if values.ndim == 1:
        return values[idx]
    return np.take_along_axis(values, idx[..., None], axis=-1)[..., 0]


def curve_cumulative(nodes, values, t):
    """Exact integral of the step curve over ``[0, t]``."""
    nodes = np.asarray(nodes, dtype=float)
    lo = np.concatenate(([0.0], nodes[:-1]))
    widths = np.clip(np.asarray(t, dtype=float)[..., None] - lo, 0.0, nodes - lo)
    return np.sum(np.asarray(values, dtype=float) * widths, axis=-1)


def avg_variance(nodes, values, t, T):
    """Mean of the curve over ``[t, T]``; the ``t == T`` limit is the value at ``T``."""
    t = np.asarray(t, dtype=float)
    T = np.asarray(T, dtype=float)
    tau = T - t
    if np.any(tau < 0):
        raise ValueError("avg_variance requires t <= T")
    integral = curve_cumulative(nodes, values, T) - curve_cumulative(nodes, values, t)
    safe = np.where(tau > 0, tau, 1.0)
    return np.where(tau > 0, integral / safe, curve_value(nodes, values, T))


def avg_variance_dt(nodes, values, t, T):
    """Derivative in ``t`` of :func:`avg_variance` (away from curve nodes)."""
    t = np.asarray(t, dtype=float)
    tau = np.asarray(T, dtype=float) - t
    mean = avg_variance(nodes, values, t, T)
    nodes = np.asarray(nodes, dtype=float)
    idx = np.minimum(np.searchsorted(nodes, t, side="right"), len(nodes) - 1)
    values = np.asarray(values, dtype=float)
    right = values[idx] if values.ndim == 1 else np.take_along_axis(values, idx[..., None], axis=-1)[..., 0]
    safe = np.where(tau > 0, tau, 1.0)
    return np.where(tau > 0, (mean - right) / safe, 0.0)


@dataclass(frozen=True)
class ForwardVarianceCurve:
    """Step-function forward variance curve on ``(0, nodes[-1]]``."""

    nodes: tuple
    values: tuple

    def __post_init__(self):
        nodes = tuple(float(n) for n in self.nodes)
        values = tuple(float(v) for v in self.values)
        if len(nodes) == 0 or len(nodes) != len(values):
            raise ValueError("nodes and values must be non-empty and of equal length")
        if nodes[0] <= 0 or any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise ValueError("nodes must be positive and strictly increasing")
        if any(v < 0 for v in values):
            raise ValueError("forward variances must be non-negative")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, xi: float, horizon: float = MAX_MATURITY) -> "ForwardVarianceCurve":
        return cls((horizon,), (xi,))

    @classmethod
    def nine_segment(cls, values: Sequence[float]) -> "ForwardVarianceCurve":
        return cls(NINE_SEGMENT_NODES, tuple(values))

    @classmethod
    def from_pairs(cls, pairs) -> "ForwardVarianceCurve":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def to_pairs(self) -> list:
        return [(n, v) for n, v in zip(self.nodes, self.values)]

    @property
    def mode(self) -> str:
        for name, nodes in CURVE_MODES.items():
            if len(nodes) == len(self.nodes) and np.allclose(nodes, self.nodes, rtol=0, atol=1e-15):
                return name
        return "custom"

    def value(self, t):
        return curve_value(self.nodes, self.values, t)

    def integral(self, a, b):
        return curve_cumulative(self.nodes, self.values, b) - curve_cumulative(self.nodes, self.values, a)


def avg_sigma(t, T, curve: ForwardVarianceCurve):
    """Root-mean-square volatility of the curve over ``[t, T]``, exact."""
    if np.any(np.asarray(t) >= np.asarray(T)):
        raise ValueError("avg_sigma requires t < T")
    return np.sqrt(avg_variance(curve.nodes, curve.values, t, T))


# ---------------------------------------------------------------------------
# model parameters and points


def psd_bounds(rho1, rho2):
    """Admissible interval for rho12 keeping the 3x3 correlation matrix PSD."""
    centre = rho1 * rho2
    half = np.sqrt(np.maximum((1 - np.square(rho1)) * (1 - np.square(rho2)), 0.0))
    return centre - half, centre + half


@dataclass(frozen=True)
class BergomiParams:
    omega: float
    k1: float
    k2: float
    theta: float
    rho1: float
    rho2: float
    rho12: float
    r: float
    q: float
    curve: ForwardVarianceCurve

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("mean-reversion rates must be positive")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        for name in ("rho1", "rho2", "rho12"):
            if not -1 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [-1, 1]")
        lo, hi = psd_bounds(self.rho1, self.rho2)
        if not lo - 1e-12 <= self.rho12 <= hi + 1e-12:
            raise ValueError(f"rho12={self.rho12} violates the PSD bounds [{lo:.6g}, {hi:.6g}]")


def columns(curve_mode: str) -> list:
    """Flat input layout for a curve mode (16 or 24 columns)."""
    n = len(curve_nodes(curve_mode))
    xi = ["xi"] if n == 1 else [f"xi{j}" for j in range(1, n + 1)]
    return ["s", "t", "x1", "x2", "T", "B", "r", "q", *xi, "omega", "k1", "k2", "theta", "rho1", "rho2", "rho12"]


def curve_mode_for_width(width: int) -> str:
    for mode in CURVE_MODES:
        if len(columns(mode)) == width:
            return mode
    raise ValueError(f"no curve mode has {width} input columns")


@dataclass(frozen=True)
class ParamPoint:
    """A full network input: state variables, contract terms and model parameters."""

    s: float
    t: float
    x1: float
    x2: float
    T: float
    B: float
    params: BergomiParams
    kind: OptionKind = OptionKind.CALL

    def __post_init__(self):
        object.__setattr__(self, "kind", OptionKind.parse(self.kind))
        if not 0 <= self.t <= self.T <= MAX_MATURITY:
            raise ValueError("need 0 <= t <= T <= 3")
        if not self.B > 0:
            raise ValueError("barrier must be positive")

    @property
    def curve_mode(self) -> str:
        return self.params.curve.mode

    def to_vector(self) -> np.ndarray:
        p = self.params
        return np.array(
            [self.s, self.t, self.x1, self.x2, self.T, self.B, p.r, p.q, *p.curve.values,
             p.omega, p.k1, p.k2, p.theta, p.rho1, p.rho2, p.rho12],
            dtype=float,
        )

    @classmethod
    def from_vector(cls, vec, kind=OptionKind.CALL, curve_mode: str | None = None) -> "ParamPoint":
        vec = [float(v) for v in vec]
        mode = curve_mode or curve_mode_for_width(len(vec))
        m = len(curve_nodes(mode))
        xi = vec[8 : 8 + m]
        omega, k1, k2, theta, rho1, rho2, rho12 = vec[8 + m :]
        curve = ForwardVarianceCurve(CURVE_MODES[mode], tuple(xi))
        params = BergomiParams(omega, k1, k2, theta, rho1, rho2, rho12, vec[6], vec[7], curve)
        return cls(vec[0], vec[1], vec[2], vec[3], vec[4], vec[5], params, kind)

    def with_(self, **changes) -> "ParamPoint":
        return replace(self, **changes)


@dataclass
class PointBatch:
    """Column view over an ``(n, d)`` array of points in :func:`columns` order."""

    X: np.ndarray
    curve_mode: str = field(default="")

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if not self.curve_mode:
            self.curve_mode = curve_mode_for_width(self.X.shape[1])
        if self.X.shape[1] != len(columns(self.curve_mode)):
            raise ValueError(f"expected {len(columns(self.curve_mode))} columns, got {self.X.shape[1]}")
        self.nodes = curve_nodes(self.curve_mode)
        self._m = len(self.nodes)

    def __len__(self) -> int:
        return self.X.shape[0]

    def col(self, name: str) -> np.ndarray:
        return self.X[:, columns(self.curve_mode).index(name)]

    s = property(lambda self: self.X[:, 0])
    t = property(lambda self: self.X[:, 1])
    x1 = property(lambda self: self.X[:, 2])
    x2 = property(lambda self: self.X[:, 3])
    T = property(lambda self: self.X[:, 4])
    B = property(lambda self: self.X[:, 5])
    r = property(lambda self: self.X[:, 6])
    q = property(lambda self: self.X[:, 7])
    xi = property(lambda self: self.X[:, 8 : 8 + self._m])
    omega = property(lambda self: self.X[:, 8 + self._m])
    k1 = property(lambda self: self.X[:, 9 + self._m])
    k2 = property(lambda self: self.X[:, 10 + self._m])
    theta = property(lambda self: self.X[:, 11 + self._m])
    rho1 = property(lambda self: self.X[:, 12 + self._m])
    rho2 = property(lambda self: self.X[:, 13 + self._m])
    rho12 = property(lambda self: self.X[:, 14 + self._m])

    @property
    def tau(self) -> np.ndarray:
        return self.T - self.t

    def replace(self, **cols) -> "PointBatch":
        """Copy with some columns overridden (the original is never mutated)."""
        X = self.X.copy()
        names = columns(self.curve_mode)
        for name, value in cols.items():
            X[:, names.index(name)] = value
        return PointBatch(X, self.curve_mode)

    def point(self, i: int, kind=OptionKind.CALL) -> ParamPoint:
        return ParamPoint.from_vector(self.X[i], kind, self.curve_mode)

    @classmethod
    def from_points(cls, points: Sequence[ParamPoint]) -> "PointBatch":
        return cls(np.stack([p.to_vector() for p in points]), points[0].curve_mode)


# ---------------------------------------------------------------------------
# factor variance and instantaneous variance


def alpha_theta(theta, rho12):
    theta = np.asarray(theta, dtype=float)
    radicand = (1 - theta) ** 2 + theta**2 + 2 * np.asarray(rho12) * theta * (1 - theta)
    if np.any(radicand <= 0):
        raise ValueError("alpha_theta radicand must be positive")
    out = 1.0 / np.sqrt(radicand)
    return out[()] if out.ndim == 0 else out


def _decay(rate, t):
    # (1 - exp(-rate t)) / rate
    return -np.expm1(-rate * t) / rate


def var_xtt(t, k1, k2, theta, rho12):
    """Variance of the normalized factor mix x_t^t started from zero at time 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("var_xtt requires t >= 0")
    a2 = alpha_theta(theta, rho12) ** 2
    out = a2 * (
        (1 - theta) ** 2 * _decay(2 * k1, t)
        + theta**2 * _decay(2 * k2, t)
        + 2 * theta * (1 - theta) * rho12 * _decay(k1 + k2, t)
    )
    return out[()] if np.ndim(out) == 0 else out


def xi_from_factors(xi0, t, x1, x2, omega, k1, k2, theta, rho12):
    """Instantaneous variance given the curve value ``xi0`` at ``t``."""
    x = alpha_theta(theta, rho12) * ((1 - theta) * x1 + theta * x2)
    return xi0 * np.exp(omega * x - 0.5 * omega**2 * var_xtt(t, k1, k2, theta, rho12))


def xi_inst(t, x1, x2, params: BergomiParams):
    """Spot variance xi_t^t; its square root is the PDE volatility coefficient."""
    p = params
    xi0 = p.curve.value(t)
    return xi_from_factors(xi0, t, x1, x2, p.omega, p.k1, p.k2, p.theta, p.rho12)


def xi_inst_batch(batch: PointBatch, x1=None, x2=None):
    x1 = batch.x1 if x1 is None else x1
    x2 = batch.x2 if x2 is None else x2
    xi0 = curve_value(batch.nodes, batch.xi, batch.t)
    return xi_from_factors(xi0, batch.t, x1, x2, batch.omega, batch.k1, batch.k2, batch.theta, batch.rho12)


# ---------------------------------------------------------------------------
# domain


def x_bound(k):
    """Half-width of the factor training box, three stationary std devs (padded)."""
    return 3.0 * np.sqrt(1.0 / (2.0 * np.asarray(k, dtype=float)) + 0.01)


def s_bounds(kind, B=None, strike: float = STRIKE, test: bool = False):
    """Log-price range for a kind; barrier kinds are truncated at ``ln B``."""
    kind = OptionKind.parse(kind)
    lo, hi = (np.log(strike / 2), np.log(2 * strike)) if test else (np.log(strike / 20), np.log(20 * strike))
    if not kind.is_barrier:
        return lo, hi
    ln_b = np.log(np.asarray(B, dtype=float))
    return (lo, ln_b) if kind.is_up else (ln_b, hi)


def domain_bounds(params: BergomiParams, kind=OptionKind.CALL, B: float | None = None, strike: float = STRIKE):
    """``(s_m, s_M, x1_m, x1_M, x2_m, x2_M)`` for the training box."""
    s_m, s_M = s_bounds(kind, B, strike)
    b1, b2 = x_bound(params.k1), x_bound(params.k2)
    return float(s_m), float(s_M), float(-b1), float(b1), float(-b2), float(b2)


# ---------------------------------------------------------------------------
# deterministic-factor estimate on the volatility boundary


def _integrated_deterministic_variance(batch: PointBatch, x1, x2, intervals: int = SIMPSON_INTERVALS):
    """Composite Simpson of xi_u^u along x_j e^{-k_j (u - t)} over [t, T].

    Each curve segment intersected with [t, T] gets its own Simpson grid so
    the step discontinuities sit on grid boundaries.
    """
    nodes = batch.nodes
    t = batch.t[:, None]
    T = batch.T[:, None]
    lo = np.clip(np.concatenate(([0.0], nodes[:-1]))[None, :], t, T)
    hi = np.clip(nodes[None, :], t, T)
    width = hi - lo  # (n, m)
    grid = np.linspace(0.0, 1.0, intervals + 1)
    u = lo[..., None] + width[..., None] * grid  # (n, m, g)
    dt = u - t[..., None]
    k1, k2 = batch.k1[:, None, None], batch.k2[:, None, None]
    theta, rho12 = batch.theta[:, None, None], batch.rho12[:, None, None]
    omega = batch.omega[:, None, None]
    x = alpha_theta(theta, rho12) * (
        (1 - theta) * np.asarray(x1)[:, None, None] * np.exp(-k1 * dt)
        + theta * np.asarray(x2)[:, None, None] * np.exp(-k2 * dt)
    )
    integrand = np.exp(omega * x - 0.5 * omega**2 * var_xtt(u, k1, k2, theta, rho12))
    w = np.ones(intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    seg = (integrand * w).sum(axis=-1) * width / (3.0 * intervals)
    return np.sum(batch.xi * seg, axis=-1)


def boundary_estimate_batch(batch: PointBatch, eta: int, x1=None, x2=None, strike: float = STRIKE):
    """Black-Scholes price with the factors frozen on their deterministic decay paths."""
    x1 = batch.x1 if x1 is None else np.broadcast_to(x1, batch.t.shape)
    x2 = batch.x2 if x2 is None else np.broadcast_to(x2, batch.t.shape)
    tau = batch.tau
    total = _integrated_deterministic_variance(batch, x1, x2)
    if not np.all(np.isfinite(total)):
        raise FloatingPointError("boundary estimate quadrature produced non-finite values")
    sigma = np.sqrt(np.where(tau > 0, total / np.where(tau > 0, tau, 1.0), 0.0))
    return bs_vanilla(batch.s, strike, tau, sigma, batch.r, batch.q, eta)


def boundary_estimate(point: ParamPoint, strike: float = STRIKE) -> float:
    if point.kind.is_barrier:
        raise ValueError("boundary_estimate is defined for vanilla kinds only")
    batch = PointBatch(point.to_vector()[None, :], point.curve_mode)
    return float(boundary_estimate_batch(batch, point.kind.eta, strike=strike)[0])
