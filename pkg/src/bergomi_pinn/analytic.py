"""Closed-form Black-Scholes prices in log-price coordinates.

All pricing functions broadcast over numpy arrays. ``s`` is the log spot,
``tau`` the time to maturity. The exact normal CDF is used throughout; the
sigmoid approximation :func:`norm_cdf_approx` is kept for the network
singular terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .options import OptionKind

SIGMA_FLOOR = 1e-8
_CDF_SLOPE = 2.0 * np.sqrt(2.0 / np.pi)


def norm_cdf(z):
    """Standard normal CDF (erf based)."""
    return ndtr(z)


def norm_cdf_approx(z):
    """Sigmoid approximation of the normal CDF, max abs error about 2e-4."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("norm_cdf_approx requires finite input")
    out = expit(_CDF_SLOPE * (z + 0.044715 * z**3))
    return out[()] if out.ndim == 0 else out


def _limit_cdf(x):
    """Limit of N(x / eps) as eps -> 0+."""
    return np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))


def _moneyness(s, strike, tau, sigma, r, q):
    s, strike, tau, sigma, r, q = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, strike, tau, sigma, r, q)))
    if np.any(strike <= 0):
        raise ValueError("strike must be positive")
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    h = s - np.log(strike) + (r - q) * tau
    v = sigma * np.sqrt(tau)
    return s, strike, tau, h, v, r, q


def _cdf_pair(h, v, eta):
    """N(eta(h/v + v/2)) and N(eta(h/v - v/2)) with the v -> 0 limit handled."""
    degenerate = v <= 0
    v_safe = np.where(degenerate, 1.0, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.where(degenerate, 0.0, h / v_safe + 0.5 * v_safe)
        d2 = np.where(degenerate, 0.0, h / v_safe - 0.5 * v_safe)
    n1 = np.where(degenerate, _limit_cdf(eta * h), ndtr(eta * d1))
    n2 = np.where(degenerate, _limit_cdf(eta * h), ndtr(eta * d2))
    return n1, n2


def bs_vanilla(s, strike, tau, sigma, r=0.0, q=0.0, eta=1):
    """Vanilla call (eta=+1) or put (eta=-1) price.

    Degenerate ``tau == 0`` or ``sigma == 0`` return the discounted intrinsic
    value of the forward instead of evaluating ``h / v``.
    """
    s, strike, tau, h, v, r, q = _moneyness(s, strike, tau, sigma, r, q)
    n1, n2 = _cdf_pair(h, v, eta)
    out = eta * np.exp(s - q * tau) * n1 - eta * strike * np.exp(-r * tau) * n2
    return out[()] if out.ndim == 0 else out


def bs_digital(s, strike, tau, sigma, r=0.0, q=0.0, eta=1):
    """Cash-or-nothing digital paying 1{S_T > K} (eta=+1) or 1{S_T < K} (eta=-1)."""
    s, strike, tau, h, v, r, q = _moneyness(s, strike, tau, sigma, r, q)
    _, n2 = _cdf_pair(h, v, eta)
    out = np.exp(-r * tau) * n2
    return out[()] if out.ndim == 0 else out


def bs_barrier(kind, s, strike, barrier, tau, sigma, r=0.0, q=0.0):
    """Continuously monitored barrier option price.

    Raises ``ValueError`` outside the region where the closed form applies:
    up barriers need ``s <= ln B``, down barriers ``s >= ln B``, up calls
    ``B >= K`` and down puts ``B <= K``.
    """
    kind = OptionKind.parse(kind)
    if not kind.is_barrier:
        raise ValueError(f"{kind} is not a barrier option")
    s, strike, barrier, tau, sigma, r, q = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (s, strike, barrier, tau, sigma, r, q))
    )
    if np.any(barrier <= 0):
        raise ValueError("barrier must be positive")
    ln_b = np.log(barrier)
    tol = 1e-12 * np.maximum(1.0, np.abs(ln_b))
    if kind.is_up and np.any(s > ln_b + tol):
        raise ValueError("up barrier formulas require s <= ln(B)")
    if not kind.is_up and np.any(s < ln_b - tol):
        raise ValueError("down barrier formulas require s >= ln(B)")
    if kind in (OptionKind.UP_IN_CALL, OptionKind.UP_OUT_CALL) and np.any(barrier < strike):
        raise ValueError("up-and-in/out calls require B >= K")
    if kind in (OptionKind.DOWN_IN_PUT, OptionKind.DOWN_OUT_PUT) and np.any(barrier > strike):
        raise ValueError("down-and-in/out puts require B <= K")

    sigma = np.maximum(sigma, SIGMA_FLOOR)
    with np.errstate(over="ignore"):
        delta = np.exp((s - ln_b) * (1.0 + 2.0 * (q - r) / sigma**2))
    s_ref = 2.0 * ln_b - s

    def cv(x, k):
        return bs_vanilla(x, k, tau, sigma, r, q, 1)

    def pv(x, k):
        return bs_vanilla(x, k, tau, sigma, r, q, -1)

    def cd(x, k):
        return bs_digital(x, k, tau, sigma, r, q, 1)

    def pd(x, k):
        return bs_digital(x, k, tau, sigma, r, q, -1)

    B, K = barrier, strike
    if kind.eta == 1:
        vanilla = cv(s, K)
        if kind.is_up:
            knock_in = cv(s, B) + (B - K) * cd(s, B) + delta * (cv(s_ref, K) - cv(s_ref, B) + (K - B) * cd(s_ref, B))
        else:
            hi = np.maximum(B, K)
            gap = np.maximum(0.0, B - K)
            knock_in = cv(s, K) - cv(s, hi) - gap * cd(s, B) + delta * (cv(s_ref, hi) + gap * cd(s_ref, B))
    else:
        vanilla = pv(s, K)
        if kind.is_up:
            lo = np.minimum(B, K)
            gap = np.maximum(0.0, K - B)
            knock_in = pv(s, K) - pv(s, lo) - gap * pd(s, B) + delta * (pv(s_ref, lo) + gap * pd(s_ref, B))
        else:
            knock_in = pv(s, B) - (B - K) * pd(s, B) + delta * (pv(s_ref, K) - pv(s_ref, B) + (B - K) * pd(s_ref, B))
    out = knock_in if kind.is_knock_in else vanilla - knock_in
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BsInputs:
    """One Black-Scholes pricing request."""

    s: float
    strike: float
    tau: float
    sigma: float
    kind: OptionKind = OptionKind.CALL
    barrier: float = float("nan")
    r: float = 0.0
    q: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", OptionKind.parse(self.kind))
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if self.tau < 0 or self.sigma < 0:
            raise ValueError("tau and sigma must be non-negative")
        if self.kind.is_barrier and not self.barrier > 0:
            raise ValueError("barrier must be positive for barrier kinds")


def bs_price(inputs: BsInputs) -> float:
    k = inputs.kind
    if k.is_barrier:
        return float(bs_barrier(k, inputs.s, inputs.strike, inputs.barrier, inputs.tau, inputs.sigma, inputs.r, inputs.q))
    return float(bs_vanilla(inputs.s, inputs.strike, inputs.tau, inputs.sigma, inputs.r, inputs.q, k.eta))
