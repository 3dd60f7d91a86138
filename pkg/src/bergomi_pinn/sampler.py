"""Random training and test points over the Bergomi parameter box.

Every batch is drawn from its own counter-based (Philox) stream keyed by
``(seed, batch_index)``, so batches can be generated in any order or on
separate workers and still reproduce exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .bergomi import STRIKE, PointBatch, columns, curve_nodes, psd_bounds, x_bound
from .options import OptionKind

# uniform sampling ranges shared by training and test points
RANGES = {
    "T": (0.0, 3.0),
    "xi": (0.05**2, 0.5**2),
    "r": (0.0, 0.1),
    "q": (0.0, 0.1),
    "omega": (0.0, 3.0),
    "theta": (0.0, 1.0),
    "k1": (0.1, 4.0),
    "k2": (2.0, 12.0),
    "rho1": (-0.9, 0.2),
    "rho2": (-0.9, 0.2),
}
MIN_TAU = 1e-6
FACTOR_VARIANCE_PAD = 0.01


def ln_barrier_range(kind, strike: float = STRIKE):
    kind = OptionKind.parse(kind)
    if kind in (OptionKind.UP_IN_CALL, OptionKind.UP_OUT_CALL):
        return np.log(strike), np.log(1.5 * strike)
    if kind in (OptionKind.DOWN_IN_PUT, OptionKind.DOWN_OUT_PUT):
        return np.log(strike / 1.5), np.log(strike)
    return np.log(strike / 1.5), np.log(1.5 * strike)


def make_rng(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def sample_rho12(rho1, rho2, rng: np.random.Generator):
    lo, hi = psd_bounds(np.asarray(rho1, dtype=float), np.asarray(rho2, dtype=float))
    return rng.uniform(lo, hi)


def factor_covariance(t, k1, k2, rho12, pad: float = FACTOR_VARIANCE_PAD):
    """Stationary-started OU covariance at ``t`` with ``pad`` added to the variances."""
    t = np.asarray(t, dtype=float)
    v1 = -np.expm1(-2 * k1 * t) / (2 * k1) + pad
    v2 = -np.expm1(-2 * k2 * t) / (2 * k2) + pad
    c12 = rho12 * -np.expm1(-(k1 + k2) * t) / (k1 + k2)
    return v1, v2, c12


def sample_factors(t, k1, k2, rho12, rng: np.random.Generator, clip: bool = True):
    """Bivariate normal draw of (x1, x2) at time t, clipped to the training box."""
    v1, v2, c12 = factor_covariance(t, k1, k2, rho12)
    z1, z2 = rng.standard_normal((2,) + np.shape(v1))
    x1 = np.sqrt(v1) * z1
    cond = np.sqrt(np.maximum(v2 - c12**2 / v1, 0.0))
    x2 = c12 / np.sqrt(v1) * z1 + cond * z2
    if clip:
        b1, b2 = x_bound(k1), x_bound(k2)
        x1, x2 = np.clip(x1, -b1, b1), np.clip(x2, -b2, b2)
    return x1, x2


@dataclass(frozen=True)
class SamplingConfig:
    kind: OptionKind = OptionKind.CALL
    curve_mode: str = "constant"
    train: bool = True
    seed: int = 0
    count: int = 1000
    strike: float = STRIKE

    def __post_init__(self):
        object.__setattr__(self, "kind", OptionKind.parse(self.kind))
        curve_nodes(self.curve_mode)
        if self.count < 1:
            raise ValueError("count must be positive")


def _maturities(rng, n, train):
    lo, hi = RANGES["T"]
    T = rng.uniform(lo, hi, n)
    t = rng.uniform(0.0, T) if train else np.zeros(n)
    bad = T - t < MIN_TAU
    while bad.any():
        k = int(bad.sum())
        T[bad] = rng.uniform(lo, hi, k)
        t[bad] = rng.uniform(0.0, T[bad]) if train else 0.0
        bad = T - t < MIN_TAU
    return T, t


def sample_batch(cfg: SamplingConfig, rng: np.random.Generator, n: int | None = None) -> PointBatch:
    """Draw ``n`` (default ``cfg.count``) points jointly satisfying the sampling constraints."""
    n = cfg.count if n is None else n
    kind, K = cfg.kind, cfg.strike
    m = len(curve_nodes(cfg.curve_mode))
    u = lambda name, size=n: rng.uniform(*RANGES[name], size)  # noqa: E731

    T, t = _maturities(rng, n, cfg.train)
    if kind.is_barrier:
        B = np.exp(rng.uniform(*ln_barrier_range(kind, K), n))
    else:
        B = np.full(n, K)
    r, q = u("r"), u("q")
    xi = u("xi", (n, m))
    omega, theta, k1, k2 = u("omega"), u("theta"), u("k1"), u("k2")
    rho1, rho2 = u("rho1"), u("rho2")
    rho12 = sample_rho12(rho1, rho2, rng)
    if cfg.train:
        x1, x2 = sample_factors(t, k1, k2, rho12, rng)
    else:
        x1, x2 = np.zeros(n), np.zeros(n)

    lo, hi = (np.log(K / 2), np.log(2 * K)) if not cfg.train else (np.log(K / 20), np.log(20 * K))
    lo, hi = np.full(n, lo), np.full(n, hi)
    if kind.is_barrier:
        if kind.is_up:
            hi = np.log(B)
        else:
            lo = np.log(B)
    s = rng.uniform(lo, hi)

    X = np.column_stack([s, t, x1, x2, T, B, r, q, xi, omega, k1, k2, theta, rho1, rho2, rho12])
    return PointBatch(X, cfg.curve_mode)


def sample_point(cfg: SamplingConfig, rng: np.random.Generator):
    return sample_batch(cfg, rng, 1).point(0, cfg.kind)


def batch_for_index(cfg: SamplingConfig, index: int, n: int | None = None) -> PointBatch:
    """Batch ``index`` of the stream defined by ``cfg.seed``."""
    return sample_batch(cfg, make_rng(cfg.seed, index), n)


def write_points_csv(path, batch: PointBatch, extra: dict | None = None):
    names = columns(batch.curve_mode)
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + list(extra))
        for i, row in enumerate(batch.X):
            w.writerow([repr(float(v)) for v in row] + [_fmt(extra[k][i]) for k in extra])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating, int, np.integer)) else str(v)


def read_points_csv(path) -> tuple[PointBatch, dict]:
    """Read points written by :func:`write_points_csv`; unknown columns come back as extras."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty points file")
    header, body = rows[0], rows[1:]
    for mode in ("nine-segment", "constant"):
        width = len(columns(mode))
        if header[:width] == columns(mode):
            break
    else:
        raise ValueError(f"{path}: header does not start with the point columns")
    X = np.array([[float(v) for v in row[:width]] for row in body], dtype=float).reshape(-1, width)
    extra = {}
    for j, name in enumerate(header[width:], start=width):
        vals = [row[j] for row in body]
        try:
            extra[name] = np.array([float(v) for v in vals])
        except ValueError:
            extra[name] = vals
    return PointBatch(X, mode), extra
