"""Error metrics, batch pricing with trained networks, benchmarks over point sets
and the price-curve export.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .bergomi import STRIKE, BergomiParams, ForwardVarianceCurve, ParamPoint, PointBatch, s_bounds
from .mc import McConfig, benchmark_point
from .options import OptionKind
from .sampler import write_points_csv

H_FLOOR = 0.25


def _pair(pred, bench):
    pred = np.asarray(pred, dtype=float).ravel()
    bench = np.asarray(bench, dtype=float).ravel()
    if pred.shape != bench.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {bench.size} benchmarks")
    if pred.size == 0:
        raise ValueError("need at least one value")
    return pred, bench


def rmse(pred, bench) -> float:
    pred, bench = _pair(pred, bench)
    return float(np.sqrt(np.mean((pred - bench) ** 2)))


def relative_error(pred, bench, h: float = H_FLOOR) -> np.ndarray:
    """``(pred - bench) / max(bench, h)`` elementwise."""
    pred, bench = _pair(pred, bench)
    if h <= 0:
        raise ValueError("h must be positive")
    return (pred - bench) / np.maximum(bench, h)


def check_domain(kind, batch: PointBatch, strike: float = STRIKE) -> None:
    """Reject points outside the region where a kind's network was trained.

    Up calls with ``B < K`` and down puts with ``B > K`` are degenerate
    (knock-in equals vanilla, or the contract can never pay) and excluded.
    """
    kind = OptionKind.parse(kind)
    if not kind.is_barrier:
        return
    B, ln_b, s = batch.B, np.log(batch.B), batch.s
    if kind in (OptionKind.UP_IN_CALL, OptionKind.UP_OUT_CALL) and np.any(B < strike):
        raise ValueError("up calls with B < K are outside the priced domain")
    if kind in (OptionKind.DOWN_IN_PUT, OptionKind.DOWN_OUT_PUT) and np.any(B > strike):
        raise ValueError("down puts with B > K are outside the priced domain")
    tol = 1e-12
    if kind.is_up and np.any(s > ln_b + tol) or not kind.is_up and np.any(s < ln_b - tol):
        raise ValueError(f"{kind} points must lie on the live side of the barrier")


def _check_net(net, kind: OptionKind, batch: PointBatch):
    if net is None:
        raise ValueError(f"pricing {kind} requires a {kind} network")
    if OptionKind.parse(net.kind) != kind:
        raise ValueError(f"expected a {kind} network, got {net.kind}")
    if net.curve_mode != batch.curve_mode:
        raise ValueError(f"network curve mode {net.curve_mode} does not match points ({batch.curve_mode})")


def price_batch(kind, batch: PointBatch, vanilla=None, knock_in=None) -> np.ndarray:
    """Network prices for ``kind``; knock-outs are the vanilla price minus the knock-in price."""
    kind = OptionKind.parse(kind)
    check_domain(kind, batch)
    if not kind.is_barrier:
        _check_net(vanilla, kind, batch)
        return vanilla.predict(batch.X)
    _check_net(knock_in, kind.knock_in, batch)
    ki = knock_in.predict(batch.X)
    if kind.is_knock_in:
        return ki
    _check_net(vanilla, kind.vanilla, batch)
    return vanilla.predict(batch.X) - ki


def benchmark_batch(kind, batch: PointBatch, mc: McConfig, target_se: float | None = None,
                    max_paths: int = 2_000_000, stream_offset: int = 0, progress=None) -> list:
    """Benchmark every point; point ``i`` uses random stream ``stream_offset + i``.

    With ``target_se`` a point whose pilot standard error exceeds the target
    is re-run with the path count scaled by the variance ratio (capped at
    ``max_paths``). Heavy-tailed payoffs can make the pilot understate the
    variance, so the re-run repeats from the latest estimate until the
    target or the cap is reached.
    """
    kind = OptionKind.parse(kind)
    check_domain(kind, batch)
    out = []
    for i in range(len(batch)):
        point = batch.point(i, kind)
        est = benchmark_point(point, mc, kind, stream=stream_offset + i)
        paths = mc.paths
        while target_se is not None and est.se > target_se and paths < max_paths:
            need = math.ceil(1.2 * paths * (est.se / target_se) ** 2)
            paths = min(max_paths, need + need % 2)
            rerun = McConfig(paths, mc.steps_per_year, mc.seed, mc.antithetic, mc.n_steps, mc.block_paths)
            est = benchmark_point(point, rerun, kind, stream=stream_offset + i)
        out.append(est)
        if progress is not None:
            progress(i, est)
    return out


@dataclass(frozen=True)
class EvalReport:
    kind: str
    count: int
    rmse: float
    bench_se_rms: float
    max_abs_error: float
    mean_error: float

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(kind, pred, estimates) -> EvalReport:
    bench = np.array([e.mean for e in estimates])
    se = np.array([e.se for e in estimates])
    pred, bench = _pair(pred, bench)
    err = pred - bench
    return EvalReport(OptionKind.parse(kind).value, len(bench), rmse(pred, bench),
                      float(np.sqrt(np.mean(se**2))), float(np.max(np.abs(err))), float(np.mean(err)))


def write_prices_csv(path, batch: PointBatch, kind, prices) -> None:
    n = len(batch)
    write_points_csv(path, batch, {"kind": [OptionKind.parse(kind).value] * n, "price": prices})


# ---------------------------------------------------------------------------
# price-curve slices

FIGURE_SLICE = {
    "B": 120.0, "r": 0.0, "q": 0.0, "xi": 0.1, "omega": 1.0, "k1": 1.0, "k2": 10.0,
    "theta": 0.5, "rho1": -0.5, "rho2": -0.5, "rho12": 0.0,
}
FIGURE_MATURITIES = (1 / 252, 1 / 52, 1 / 2)


def slice_point(kind, T: float, curve_mode: str = "constant", **overrides) -> ParamPoint:
    """A point on the reference slice (t = x1 = x2 = 0) with ``s`` set to ``ln K``."""
    vals = {**FIGURE_SLICE, **overrides}
    if curve_mode == "constant":
        curve = ForwardVarianceCurve.constant(vals["xi"])
    else:
        curve = ForwardVarianceCurve.nine_segment([vals["xi"]] * 9)
    params = BergomiParams(vals["omega"], vals["k1"], vals["k2"], vals["theta"], vals["rho1"], vals["rho2"],
                           vals["rho12"], vals["r"], vals["q"], curve)
    return ParamPoint(math.log(STRIKE), 0.0, 0.0, 0.0, T, vals["B"], params, kind)


def slice_grid(kind, template: ParamPoint, n: int) -> PointBatch:
    """``n`` evenly spaced log-prices across the kind's test range, other inputs from ``template``."""
    kind = OptionKind.parse(kind)
    if n < 2:
        raise ValueError("need at least two grid points")
    lo, hi = s_bounds(kind, template.B, test=True)
    if not hi > lo:
        raise ValueError(f"empty test range for {kind} with B={template.B}")
    X = np.repeat(template.to_vector()[None, :], n, axis=0)
    X[:, 0] = np.linspace(lo, hi, n)
    batch = PointBatch(X, template.curve_mode)
    check_domain(kind, batch)
    return batch


CURVE_FIELDS = ("S", "network", "benchmark", "se", "relative_error")


def curve_export(kind, template: ParamPoint, n: int, mc: McConfig, vanilla=None, knock_in=None,
                 h: float = H_FLOOR, stream_offset: int = 0) -> list:
    """Rows of (S, network price, benchmark price, se, relative error) along an s-slice."""
    kind = OptionKind.parse(kind)
    batch = slice_grid(kind, template, n)
    pred = price_batch(kind, batch, vanilla, knock_in)
    est = benchmark_batch(kind, batch, mc, stream_offset=stream_offset)
    bench = np.array([e.mean for e in est])
    rel = relative_error(pred, bench, h)
    return [
        {"S": float(np.exp(s)), "network": float(p), "benchmark": float(e.mean), "se": float(e.se),
         "relative_error": float(r)}
        for s, p, e, r in zip(batch.s, pred, est, rel)
    ]


def write_rows_csv(path, rows: list, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_rows_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        conv = {}
        for k, v in row.items():
            try:
                conv[k] = float(v)
            except ValueError:
                conv[k] = v
        out.append(conv)
    return out

