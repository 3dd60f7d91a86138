"""Monte Carlo benchmarks for vanilla and barrier options under the Bergomi model.

Paths are simulated on a uniform grid over ``[t, T]``. The OU factors move
with their exact Gaussian transition, drawn jointly with the Brownian
increment of the stock so that the spot-vol correlation is preserved; the
log-price follows an Euler step with the variance frozen at the left end of
each step. The variance used on a step is the exact average of the forward
variance curve over that step, scaled by the factor exponential at the left
end, so ``omega = 0`` integrates the curve exactly.

Four estimators are provided:

* ``price_vanilla_conditional``: the stock's own noise is integrated out in
  closed form and each path contributes a Black-Scholes price;
* ``price_vanilla_euler``: plain simulation of the terminal payoff;
* ``price_barrier_euler``: discretely monitored barrier payoff (any kind);
* ``price_barrier_call_is``: barrier calls simulated under a drift-shifted
  measure and reweighted by the likelihood ratio.

Every path block has its own random stream keyed by
``(seed, stream, block)``, so estimates are reproducible and can be farmed
out point by point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .analytic import bs_vanilla
from .bergomi import ParamPoint, alpha_theta, avg_variance, columns, var_xtt
from .options import OptionKind


@dataclass(frozen=True)
class McConfig:
    paths: int = 100_000
    steps_per_year: int = 1000
    seed: int = 0
    antithetic: bool = False
    n_steps: int | None = None  # fixed step count regardless of maturity
    block_paths: int = 50_000

    def __post_init__(self):
        if self.paths < 2:
            raise ValueError("need at least 2 paths")
        if self.steps_per_year < 1 or (self.n_steps is not None and self.n_steps < 1):
            raise ValueError("need at least one time step")
        if self.antithetic and (self.paths % 2 or self.block_paths % 2):
            raise ValueError("antithetic sampling needs even path and block counts")
        if self.block_paths < 2:
            raise ValueError("block_paths must be at least 2")

    def steps_for(self, tau: float) -> int:
        if self.n_steps is not None:
            return self.n_steps
        return max(1, math.ceil(tau * self.steps_per_year - 1e-9))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    se: float
    paths: int
    scheme: str
    steps: int = 0
    weight_mean: float | None = None
    weight_se: float | None = None


def correlation_coeffs(rho1, rho2, rho12):
    """Loadings of (W1, W2, W_S) on independent Brownian motions (Z1, Z2, Z3).

    Returns ``(mu21, mu22, mu31, mu32, mu33)`` with ``W2 = mu21 Z1 + mu22 Z2``
    and ``W_S = mu31 Z1 + mu32 Z2 + mu33 Z3``.
    """
    rho1, rho2, rho12 = float(rho1), float(rho2), float(rho12)
    if max(abs(rho1), abs(rho2), abs(rho12)) > 1:
        raise ValueError("correlations must lie in [-1, 1]")
    mu22_sq = 1 - rho12**2
    det = 1 - rho1**2 - rho2**2 - rho12**2 + 2 * rho1 * rho2 * rho12
    if det < -1e-12:
        raise ValueError("correlation matrix is not positive semidefinite")
    if mu22_sq <= 1e-14:
        if abs(rho2 - rho1 * rho12) > 1e-10:
            raise ValueError("|rho12| = 1 requires rho2 = rho1 * rho12")
        return rho12, 0.0, rho1, 0.0, math.sqrt(max(1 - rho1**2, 0.0))
    mu22 = math.sqrt(mu22_sq)
    mu32 = (rho2 - rho1 * rho12) / mu22
    mu33 = math.sqrt(max(det, 0.0) / mu22_sq)
    return rho12, mu22, rho1, mu32, mu33


def _sym_sqrt_factor(cov: np.ndarray) -> np.ndarray:
    """A with A A^T = cov, tolerant of rank deficiency."""
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class _Plan:
    point: ParamPoint
    n_steps: int
    dt: float
    times: np.ndarray  # left ends of the steps
    xi0: np.ndarray  # exact curve average per step
    var_x: np.ndarray  # var(x_u^u) at the left ends
    mu33: float
    factor: np.ndarray  # 3x3 loading of (B_corr, eps1, eps2)
    decay1: float
    decay2: float
    alpha: float


def _plan(point: ParamPoint, n_steps: int) -> _Plan:
    p = point.params
    tau = point.T - point.t
    if tau <= 0:
        raise ValueError("Monte Carlo pricing requires t < T")
    dt = tau / n_steps
    edges = point.t + dt * np.arange(n_steps + 1)
    edges[-1] = point.T
    xi0 = avg_variance(p.curve.nodes, p.curve.values, edges[:-1], edges[1:])
    _, _, _, _, mu33 = correlation_coeffs(p.rho1, p.rho2, p.rho12)
    var_x = np.asarray(var_xtt(edges[:-1], p.k1, p.k2, p.theta, p.rho12), dtype=float)

    def decay(rate):
        # integral of e^{-rate u} over one step
        return -math.expm1(-rate * dt) / rate

    cov = np.array([
        [(1 - mu33**2) * dt, p.rho1 * decay(p.k1), p.rho2 * decay(p.k2)],
        [p.rho1 * decay(p.k1), decay(2 * p.k1), p.rho12 * decay(p.k1 + p.k2)],
        [p.rho2 * decay(p.k2), p.rho12 * decay(p.k1 + p.k2), decay(2 * p.k2)],
    ])
    if np.linalg.eigvalsh(cov).min() < -1e-12 * dt:
        raise ValueError("step covariance is not positive semidefinite")
    return _Plan(point, n_steps, dt, edges[:-1], xi0, var_x, mu33, _sym_sqrt_factor(cov),
                 math.exp(-p.k1 * dt), math.exp(-p.k2 * dt), float(alpha_theta(p.theta, p.rho12)))


def _normals(rng, n, k, antithetic):
    if not antithetic:
        return rng.standard_normal((n, k))
    half = rng.standard_normal((n // 2, k))
    return np.concatenate([half, -half])


def _simulate_block(plan: _Plan, rng, n, *, split, shift_z3=False, antithetic=False,
                    barrier=None, strides=(1,), record_xi=False):
    """Simulate ``n`` paths; return a dict of per-path path functionals.

    ``split`` keeps the correlated and the independent stock noise apart
    (needed by the conditional and importance-sampling estimators).
    ``shift_z3`` simulates under the measure in which the independent noise
    carries the extra drift ``mu33^2 xi``; the log likelihood ratio back to
    the pricing measure is accumulated in ``log_w``. ``barrier = (ln B, up)``
    tracks the running extreme of the log-price at grid times, separately for
    each monitoring stride.
    """
    pt, p = plan.point, plan.point.params
    omega = p.omega
    drift_rq = (p.r - p.q) * plan.dt
    mu33 = plan.mu33
    corr_scale = math.sqrt(max(1 - mu33**2, 0.0))
    stochastic_vol = omega != 0.0

    s = np.full(n, pt.s)
    x1 = np.full(n, pt.x1)
    x2 = np.full(n, pt.x2)
    int_xi = np.zeros(n)
    int_corr = np.zeros(n)
    log_w = np.zeros(n)
    ext = {k: np.full(n, pt.s) for k in strides} if barrier is not None else None
    up = barrier is not None and barrier[1]
    xi_rec = np.empty((n, plan.n_steps)) if record_xi else None

    for i in range(plan.n_steps):
        if stochastic_vol:
            x = plan.alpha * ((1 - p.theta) * x1 + p.theta * x2)
            xi = plan.xi0[i] * np.exp(omega * x - 0.5 * omega**2 * plan.var_x[i])
            z = _normals(rng, n, 4, antithetic)
            y = z[:, :3] @ plan.factor.T
            d_corr, z3 = y[:, 0], z[:, 3] * math.sqrt(plan.dt)
            x1 = x1 * plan.decay1 + y[:, 1]
            x2 = x2 * plan.decay2 + y[:, 2]
            vol = np.sqrt(xi)
        else:
            xi = plan.xi0[i]
            vol = math.sqrt(xi)
            if split:
                z = _normals(rng, n, 2, antithetic) * math.sqrt(plan.dt)
                d_corr, z3 = corr_scale * z[:, 0], z[:, 1]
            else:
                d_corr = _normals(rng, n, 1, antithetic)[:, 0] * math.sqrt(plan.dt)
                z3 = None
        if record_xi:
            xi_rec[:, i] = xi
        var_dt = xi * plan.dt
        int_xi += var_dt
        if z3 is None:
            s += drift_rq - 0.5 * var_dt + vol * d_corr
        else:
            int_corr += vol * d_corr
            step_z3 = mu33 * vol * z3
            if shift_z3:
                # under the shifted measure dZ3 = dZ3~ + mu33 sqrt(xi) dt
                log_w -= step_z3 + 0.5 * mu33**2 * var_dt
                s += drift_rq - 0.5 * var_dt + vol * d_corr + step_z3 + mu33**2 * var_dt
            else:
                s += drift_rq - 0.5 * var_dt + vol * d_corr + step_z3
        if ext is not None:
            for k, arr in ext.items():
                if (i + 1) % k == 0 or i + 1 == plan.n_steps:
                    if up:
                        np.maximum(arr, s, out=arr)
                    else:
                        np.minimum(arr, s, out=arr)

    out = {"s": s, "x1": x1, "x2": x2, "int_xi": int_xi, "int_corr": int_corr, "log_w": log_w}
    if ext is not None:
        out["extreme"] = ext
    if record_xi:
        out["xi"] = xi_rec
    return out


@dataclass
class PathBundle:
    """Per-path functionals of a simulation (concatenated over blocks)."""

    s: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    int_xi: np.ndarray
    int_corr: np.ndarray
    log_w: np.ndarray
    times: np.ndarray
    xi: np.ndarray | None = None


def path_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence([int(seed), int(stream), int(block)])))


def _blocks(mc: McConfig):
    done, b = 0, 0
    while done < mc.paths:
        n = min(mc.block_paths, mc.paths - done)
        yield b, n
        done += n
        b += 1


def simulate_paths(point: ParamPoint, mc: McConfig, stream: int = 0, *, split: bool = True,
                   record_xi: bool = False) -> PathBundle:
    """Simulate ``mc.paths`` paths from ``point`` and return terminal values and integrals.

    ``int_xi`` is the integrated variance, ``int_corr`` the stochastic
    integral of ``sqrt(xi)`` against the part of the stock noise that is
    correlated with the factors. ``record_xi`` also stores the variance used
    on every step.
    """
    plan = _plan(point, mc.steps_for(point.T - point.t))
    parts = [
        _simulate_block(plan, path_rng(mc.seed, stream, b), n, split=split, antithetic=mc.antithetic,
                        record_xi=record_xi)
        for b, n in _blocks(mc)
    ]
    cat = {k: np.concatenate([blk[k] for blk in parts]) for k in ("s", "x1", "x2", "int_xi", "int_corr", "log_w")}
    xi = np.concatenate([blk["xi"] for blk in parts]) if record_xi else None
    return PathBundle(**cat, times=plan.times, xi=xi)


def _estimate(contrib: np.ndarray, mc: McConfig, scheme: str, steps: int, **extra) -> McEstimate:
    """Mean and standard error; antithetic pairs are averaged first."""
    if mc.antithetic:
        blocks, start = [], 0
        for _, n in _blocks(mc):
            blk = contrib[start:start + n]
            blocks.append(0.5 * (blk[: n // 2] + blk[n // 2:]))
            start += n
        units = np.concatenate(blocks)
    else:
        units = contrib
    se = float(np.std(units, ddof=1) / math.sqrt(len(units))) if len(units) > 1 else 0.0
    return McEstimate(float(np.mean(contrib)), se, mc.paths, scheme, steps, **extra)


def _payoff(s_T, strike, eta):
    return np.maximum(eta * (np.exp(s_T) - strike), 0.0)


def _check_kind(point: ParamPoint, kind, barrier: bool | None):
    kind = OptionKind.parse(kind if kind is not None else point.kind)
    if barrier is True and not kind.is_barrier:
        raise ValueError(f"{kind} is not a barrier option")
    if barrier is False and kind.is_barrier:
        raise ValueError(f"{kind} is not a vanilla option")
    return kind


def price_vanilla_conditional(point: ParamPoint, mc: McConfig, kind=None, strike: float = 100.0,
                              stream: int = 0, parity: bool = True) -> McEstimate:
    """Vanilla price by simulating the variance and integrating the stock noise analytically.

    Conditional on the factor paths, the log-price is Gaussian: each path is
    priced with Black-Scholes from the equivalent spot
    ``s + int sqrt(xi) dB_corr - (1 - mu33^2)/2 int xi`` and the equivalent
    volatility ``sqrt(mu33^2 int xi / tau)``.

    With ``parity`` the option that is out of the money on a forward basis
    is simulated and the other one follows from put-call parity. The
    discounted equivalent spot is an exact martingale of the scheme, so
    parity holds path by path in expectation, and the in-the-money side
    loses the variance of the forward.
    """
    kind = _check_kind(point, kind, barrier=False)
    tau = point.T - point.t
    if tau <= 0:
        raise ValueError("maturity must lie after the valuation time")
    p = point.params
    steps = mc.steps_for(tau)
    paths = simulate_paths(point, mc, stream, split=True)
    mu33 = correlation_coeffs(p.rho1, p.rho2, p.rho12)[4]
    spot = point.s + paths.int_corr - 0.5 * (1 - mu33**2) * paths.int_xi
    sigma = np.sqrt(mu33**2 * paths.int_xi / tau)
    eta, shift = kind.eta, 0.0
    log_fwd = point.s + (p.r - p.q) * tau
    if parity and eta * (log_fwd - math.log(strike)) > 0:
        eta = -eta
        shift = kind.eta * (math.exp(point.s - p.q * tau) - strike * math.exp(-p.r * tau))
    contrib = bs_vanilla(spot, strike, tau, sigma, p.r, p.q, eta)
    return _estimate(np.asarray(contrib, dtype=float) + shift, mc, "conditional", steps)


def price_vanilla_euler(point: ParamPoint, mc: McConfig, kind=None, strike: float = 100.0,
                        stream: int = 0) -> McEstimate:
    kind = _check_kind(point, kind, barrier=False)
    p = point.params
    steps = mc.steps_for(point.T - point.t)
    paths = simulate_paths(point, mc, stream, split=False)
    contrib = math.exp(-p.r * (point.T - point.t)) * _payoff(paths.s, strike, kind.eta)
    return _estimate(contrib, mc, "euler", steps)


def _barrier_run(point, mc, kind, strike, stream, strides, importance):
    p = point.params
    ln_b = math.log(point.B)
    if kind.is_up and point.s > ln_b or not kind.is_up and point.s < ln_b:
        raise ValueError(f"{kind} requires the spot on the {'lower' if kind.is_up else 'upper'} side of the barrier")
    tau = point.T - point.t
    plan = _plan(point, mc.steps_for(tau))
    disc = math.exp(-p.r * tau)
    contrib = {k: [] for k in strides}
    weights = []
    for b, n in _blocks(mc):
        blk = _simulate_block(plan, path_rng(mc.seed, stream, b), n, split=importance, shift_z3=importance,
                              antithetic=mc.antithetic, barrier=(ln_b, kind.is_up), strides=strides)
        w = np.exp(blk["log_w"])
        weights.append(w)
        pay = disc * _payoff(blk["s"], strike, kind.eta) * w
        for k in strides:
            ext = blk["extreme"][k]
            hit = ext >= ln_b if kind.is_up else ext <= ln_b
            contrib[k].append(np.where(hit == kind.is_knock_in, pay, 0.0))
    return plan.n_steps, {k: np.concatenate(v) for k, v in contrib.items()}, np.concatenate(weights)


def price_barrier_euler(point: ParamPoint, mc: McConfig, kind=None, strike: float = 100.0,
                        stream: int = 0) -> McEstimate:
    """Barrier price by plain Euler simulation, barrier monitored at grid times."""
    kind = _check_kind(point, kind, barrier=True)
    steps, contrib, _ = _barrier_run(point, mc, kind, strike, stream, (1,), importance=False)
    return _estimate(contrib[1], mc, "euler", steps)


price_barrier_put_euler = price_barrier_euler


def price_barrier_call_is(point: ParamPoint, mc: McConfig, kind=None, strike: float = 100.0,
                          stream: int = 0) -> McEstimate:
    """Barrier call price under the measure that flips the drift of the independent noise.

    The estimate reports the mean likelihood-ratio weight and its standard
    error as a diagnostic; the weight has expectation one.
    """
    kind = _check_kind(point, kind, barrier=True)
    if kind.eta != 1:
        raise ValueError("importance sampling is set up for barrier calls")
    steps, contrib, w = _barrier_run(point, mc, kind, strike, stream, (1,), importance=True)
    w_est = _estimate(w, mc, "weight", steps)
    return _estimate(contrib[1], mc, "importance", steps, weight_mean=w_est.mean, weight_se=w_est.se)


def barrier_monitoring_study(point: ParamPoint, mc: McConfig, kind=None, strides=(1, 2), strike: float = 100.0,
                             stream: int = 0, importance: bool = False) -> dict:
    """Estimates with the barrier checked every ``k`` steps, for each ``k`` in ``strides``.

    All strides share the same paths, so differences between them isolate
    the effect of the monitoring frequency.
    """
    kind = _check_kind(point, kind, barrier=True)
    steps, contrib, _ = _barrier_run(point, mc, kind, strike, stream, tuple(strides), importance)
    scheme = "importance" if importance else "euler"
    return {k: _estimate(c, mc, scheme, math.ceil(steps / k)) for k, c in contrib.items()}


def monitoring_shift(sigma, dt):
    """Barrier shift approximating discrete monitoring by a continuous barrier.

    Moving the barrier away from the spot by ``0.5826 sigma sqrt(dt)`` in log
    space reproduces the leading-order discrete-monitoring correction.
    """
    return 0.5825971579390106 * np.asarray(sigma) * np.sqrt(dt)


def benchmark_point(point: ParamPoint, mc: McConfig, kind=None, strike: float = 100.0,
                    stream: int = 0) -> McEstimate:
    """The default benchmark for a kind: conditional for vanillas, IS for barrier calls, Euler otherwise."""
    kind = OptionKind.parse(kind if kind is not None else point.kind)
    if not kind.is_barrier:
        return price_vanilla_conditional(point, mc, kind, strike, stream)
    if kind.eta == 1:
        return price_barrier_call_is(point, mc, kind, strike, stream)
    return price_barrier_euler(point, mc, kind, strike, stream)


BENCHMARK_FIELDS = ("kind", "price", "se", "scheme", "paths", "steps")


def write_benchmark_csv(path, batch, kind, estimates) -> None:
    """One row per point: all inputs, then kind, estimate, se, scheme, paths and steps."""
    kind = OptionKind.parse(kind)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns(batch.curve_mode) + list(BENCHMARK_FIELDS))
        for row, est in zip(batch.X, estimates):
            w.writerow([repr(float(v)) for v in row]
                       + [kind.value, repr(est.mean), repr(est.se), est.scheme, est.paths, est.steps])
