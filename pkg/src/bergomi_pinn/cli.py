"""Command-line entry point: ``bergomi-pinn {train,sample,price,benchmark,evaluate,curve}``.

Every command takes ``--config FILE`` (INI, see :mod:`bergomi_pinn.config`)
and any number of ``--set section.key=value`` overrides, writes its outputs
atomically and leaves a ``<output>.manifest.json`` recording the resolved
configuration, its hash, the seeds, library versions and the SHA-256 of every
input and output file. Manifests carry no timestamps, so a repeated run with
the same manifest reproduces it byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bergomi import PointBatch
from .config import Config, dump_config, load_config
from .evaluation import (CURVE_FIELDS, FIGURE_MATURITIES, benchmark_batch, curve_export, evaluate, price_batch,
                         read_rows_csv, slice_point, write_prices_csv, write_rows_csv)
from .mc import write_benchmark_csv
from .networks import load_checkpoint
from .options import OptionKind
from .sampler import SamplingConfig, batch_for_index, read_points_csv, write_points_csv
from .trainer import ConfigurationError, train

log = logging.getLogger("bergomi_pinn")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic(path, write) -> None:
    """Call ``write(tmp_path)`` and move the result onto ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _versions() -> dict:
    import scipy
    import sklearn
    import torch

    return {"bergomi_pinn": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__, "scikit-learn": sklearn.__version__}


def write_manifest(output, command: str, cfg: Config, seeds: dict, inputs=(), outputs=(), extra=None) -> Path:
    manifest = {
        "command": command,
        "config": cfg.as_dict(),
        "config_sha256": cfg.digest(),
        "seeds": seeds,
        "versions": _versions(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = Path(f"{output}.manifest.json")
    _atomic(path, lambda tmp: Path(tmp).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n"))
    return path


def _load_net(path, expect: OptionKind, curve_mode: str):
    net, _ = load_checkpoint(path)
    if OptionKind.parse(net.kind) != expect:
        raise ConfigurationError(f"{path} holds a {net.kind} network, expected {expect}")
    if net.curve_mode != curve_mode:
        raise ConfigurationError(f"{path} was trained for curve mode {net.curve_mode}, not {curve_mode}")
    return net


def _networks(kind: OptionKind, curve_mode: str, vanilla_path, knock_in_path):
    vanilla = knock_in = None
    inputs = []
    if not kind.is_knock_in:
        if not vanilla_path:
            raise ConfigurationError(f"pricing {kind} needs --vanilla")
        vanilla = _load_net(vanilla_path, kind.vanilla, curve_mode)
        inputs.append(vanilla_path)
    if kind.is_barrier:
        if not knock_in_path:
            raise ConfigurationError(f"pricing {kind} needs --knock-in")
        knock_in = _load_net(knock_in_path, kind.knock_in, curve_mode)
        inputs.append(knock_in_path)
    return vanilla, knock_in, inputs


def _test_points(cfg: Config, kind: OptionKind) -> PointBatch:
    if cfg.evaluate.seed == cfg.train.seed:
        raise ConfigurationError("evaluate.seed must differ from train.seed so test points are never training points")
    sampling = SamplingConfig(kind=kind, curve_mode=cfg.run.curve_mode, train=False, seed=cfg.evaluate.seed,
                              count=cfg.evaluate.count)
    return batch_for_index(sampling, 0)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args, cfg: Config) -> int:
    kind = cfg.kind
    out = Path(args.output)
    vanilla_path = args.vanilla or cfg.run.vanilla_checkpoint or None
    inputs = [vanilla_path] if kind.is_knock_in and vanilla_path else []
    if kind.is_knock_in and not vanilla_path:
        raise ConfigurationError(f"training {kind} needs a {kind.vanilla} checkpoint (--vanilla)")
    log_path = Path(f"{out}.log.csv")
    vanilla_before = _sha256(vanilla_path) if inputs else None
    result = train(kind, cfg.run.curve_mode, cfg.network, cfg.train, cfg.loss,
                   vanilla=vanilla_path if kind.is_knock_in else None, checkpoint_path=out, log_path=log_path)
    if inputs and _sha256(vanilla_path) != vanilla_before:
        raise RuntimeError("the vanilla checkpoint changed during knock-in training")
    last = result.history[-1] if result.history else {}
    write_manifest(out, "train", cfg, {"train": cfg.train.seed, "init": cfg.network.init_seed},
                   inputs, [out, log_path], {"final_loss_avg": last.get("loss_avg")})
    print(f"trained {kind} for {cfg.train.total_steps} steps; final moving-average loss {last.get('loss_avg'):.6g}")
    return 0


def cmd_sample(args, cfg: Config) -> int:
    kind = cfg.kind
    batch = _test_points(cfg, kind)
    _atomic(args.output, lambda tmp: write_points_csv(tmp, batch))
    write_manifest(args.output, "sample", cfg, {"evaluate": cfg.evaluate.seed}, [], [args.output])
    print(f"wrote {len(batch)} {kind} test points to {args.output}")
    return 0


def cmd_price(args, cfg: Config) -> int:
    kind = cfg.kind
    batch, _ = read_points_csv(args.points)
    vanilla, knock_in, inputs = _networks(kind, batch.curve_mode, args.vanilla, args.knock_in)
    start = time.perf_counter()
    prices = price_batch(kind, batch, vanilla, knock_in)
    elapsed = time.perf_counter() - start
    if not np.all(np.isfinite(prices)):
        raise FloatingPointError("non-finite network prices")
    log.info("priced %d points in %.3f s (%.0f prices/s)", len(batch), elapsed, len(batch) / max(elapsed, 1e-12))
    _atomic(args.output, lambda tmp: write_prices_csv(tmp, batch, kind, prices))
    write_manifest(args.output, "price", cfg, {}, [args.points, *inputs], [args.output])
    print(f"wrote {len(batch)} {kind} prices to {args.output}")
    return 0


def cmd_benchmark(args, cfg: Config) -> int:
    kind = cfg.kind
    batch, _ = read_points_csv(args.points)
    est = benchmark_batch(kind, batch, cfg.mc.mc(), cfg.mc.target_se or None)
    _atomic(args.output, lambda tmp: write_benchmark_csv(tmp, batch, kind, est))
    write_manifest(args.output, "benchmark", cfg, {"mc": cfg.mc.seed}, [args.points], [args.output])
    print(f"wrote {len(est)} {kind} benchmark prices to {args.output}")
    return 0


def cmd_evaluate(args, cfg: Config) -> int:
    """Sample fresh test points, price them with the networks and compare against Monte Carlo."""
    kind = cfg.kind
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    vanilla, knock_in, inputs = _networks(kind, cfg.run.curve_mode, args.vanilla, args.knock_in)
    batch = _test_points(cfg, kind)
    points_csv, prices_csv, bench_csv, report_json = (out / f"{kind.value}_{name}" for name in (
        "points.csv", "prices.csv", "benchmark.csv", "report.json"))
    _atomic(points_csv, lambda tmp: write_points_csv(tmp, batch))
    prices = price_batch(kind, batch, vanilla, knock_in)
    _atomic(prices_csv, lambda tmp: write_prices_csv(tmp, batch, kind, prices))
    est = benchmark_batch(kind, batch, cfg.mc.mc(), cfg.mc.target_se or None)
    _atomic(bench_csv, lambda tmp: write_benchmark_csv(tmp, batch, kind, est))
    report = evaluate(kind, prices, est).as_dict()
    _atomic(report_json, lambda tmp: Path(tmp).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n"))
    write_manifest(out / "evaluate", "evaluate", cfg, {"evaluate": cfg.evaluate.seed, "mc": cfg.mc.seed},
                   inputs, [points_csv, prices_csv, bench_csv, report_json])
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_curve(args, cfg: Config) -> int:
    kind = cfg.kind
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    vanilla, knock_in, inputs = _networks(kind, cfg.run.curve_mode, args.vanilla, args.knock_in)
    maturities = args.maturity or list(FIGURE_MATURITIES)
    written = []
    for j, T in enumerate(maturities):
        template = slice_point(kind, T, cfg.run.curve_mode)
        rows = curve_export(kind, template, args.points, cfg.mc.mc(), vanilla, knock_in,
                            h=cfg.loss.h_floor, stream_offset=j * args.points)
        path = out / f"{kind.value}_T{T:.6f}.csv"
        _atomic(path, lambda tmp, rows=rows: write_rows_csv(tmp, rows, CURVE_FIELDS))
        written.append(path)
    write_manifest(out / "curve", "curve", cfg, {"mc": cfg.mc.seed}, inputs, written,
                   {"maturities": [float(T) for T in maturities]})
    print(f"wrote {len(written)} curve files to {out}")
    return 0


def cmd_config(args, cfg: Config) -> int:
    sys.stdout.write(dump_config(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bergomi-pinn", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration value (repeatable)")
        p.add_argument("--kind", help="option kind (overrides run.kind)")
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "train one network")
    p.add_argument("--output", required=True, help="checkpoint path")
    p.add_argument("--vanilla", help="frozen vanilla checkpoint (knock-in kinds)")

    p = add("sample", cmd_sample, "write held-out test points")
    p.add_argument("--output", required=True)

    p = add("price", cmd_price, "price a points CSV with trained networks")
    p.add_argument("--points", required=True)
    p.add_argument("--vanilla")
    p.add_argument("--knock-in")
    p.add_argument("--output", required=True)

    p = add("benchmark", cmd_benchmark, "Monte Carlo prices for a points CSV")
    p.add_argument("--points", required=True)
    p.add_argument("--output", required=True)

    p = add("evaluate", cmd_evaluate, "RMSE of the networks against Monte Carlo on fresh test points")
    p.add_argument("--vanilla")
    p.add_argument("--knock-in")
    p.add_argument("--output", required=True, help="output directory")

    p = add("curve", cmd_curve, "price curves along s on the reference parameter slice")
    p.add_argument("--vanilla")
    p.add_argument("--knock-in")
    p.add_argument("--maturity", type=float, action="append", help="maturity in years (repeatable)")
    p.add_argument("--points", type=int, default=41, help="grid size along s")
    p.add_argument("--output", required=True, help="output directory")

    add("config", cmd_config, "print the resolved configuration")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.kind:
        overrides.append(f"run.kind={args.kind}")
    try:
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except (ConfigurationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
