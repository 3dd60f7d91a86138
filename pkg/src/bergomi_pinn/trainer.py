"""Streaming training loop: Adam with exponential learning-rate decay.

Vanilla networks train first; knock-in networks then train against a frozen
vanilla network of the same payoff sign. Each batch is sampled on the fly
from the counter-based stream ``(seed, batch_index)``, so a run is fully
determined by its configuration.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field

import torch

from .losses import LossConfig, knock_in_loss_terms, total_loss, vanilla_loss_terms
from .networks import BarrierNet, VanillaNet, load_checkpoint, save_checkpoint
from .options import OptionKind
from .sampler import SamplingConfig, batch_for_index

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1000
    samples: int = 2_000_000
    epochs: int = 1
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.lr_start > self.lr_end > 0:
            raise ConfigurationError("need lr_start > lr_end > 0")
        if self.batch_size < 1 or self.samples < self.batch_size:
            raise ConfigurationError("need 1 <= batch_size <= samples")
        if self.samples % self.batch_size:
            raise ConfigurationError("samples must be a multiple of batch_size")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be positive")

    @property
    def batches_per_epoch(self) -> int:
        return self.samples // self.batch_size

    @property
    def total_steps(self) -> int:
        return self.epochs * self.batches_per_epoch


@dataclass(frozen=True)
class NetConfig:
    n_layers: int = 5
    width: int = 64
    l1: int = 3
    l2: int = 2
    init_seed: int = 0


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Geometric interpolation from ``lr_start`` (step 0) to ``lr_end`` (last step)."""
    if not 0 <= step <= total_steps:
        raise ValueError("step out of range")
    frac = step / total_steps if total_steps else 1.0
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


def adam_step(weights, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One in-place Adam update with bias correction."""
    if len(weights) != len(grads) or len(weights) != len(state.m):
        raise ValueError("weights, gradients and optimizer state disagree in length")
    state.step += 1
    c1 = 1 - beta1**state.step
    c2 = 1 - beta2**state.step
    with torch.no_grad():
        for w, g, m, v in zip(weights, grads, state.m, state.v):
            if w.shape != g.shape:
                raise ValueError("gradient shape mismatch")
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            w.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + eps))
    return state


def clip_global_norm(grads, max_norm: float) -> float:
    norm = math.sqrt(sum(float(torch.sum(g * g)) for g in grads))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g.mul_(scale)
    return norm


def params_digest(net) -> str:
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


@dataclass
class TrainResult:
    net: torch.nn.Module
    history: list = field(default_factory=list)


def _resolve_vanilla(vanilla, kind: OptionKind, curve_mode: str):
    if vanilla is None:
        raise ConfigurationError(f"training {kind} requires a trained {kind.vanilla} checkpoint")
    if not isinstance(vanilla, torch.nn.Module):
        vanilla, _ = load_checkpoint(vanilla)
    if vanilla.kind != kind.vanilla:
        raise ConfigurationError(f"{kind} needs a {kind.vanilla} network, got {vanilla.kind}")
    if vanilla.curve_mode != curve_mode:
        raise ConfigurationError("vanilla checkpoint curve mode does not match")
    return vanilla


def build_for_kind(kind, curve_mode: str, net_cfg: NetConfig):
    kind = OptionKind.parse(kind)
    if kind.is_knock_in:
        return BarrierNet(kind, curve_mode, net_cfg.l1, net_cfg.l2, net_cfg.width, seed=net_cfg.init_seed)
    if kind.is_barrier:
        raise ConfigurationError("knock-out options are not trained; they are vanilla minus knock-in")
    return VanillaNet(kind, curve_mode, net_cfg.n_layers, net_cfg.width, seed=net_cfg.init_seed)


def train(kind, curve_mode: str = "constant", net_cfg: NetConfig = NetConfig(), cfg: TrainConfig = TrainConfig(),
          loss_cfg: LossConfig = LossConfig(), vanilla=None, checkpoint_path=None, log_path=None,
          net=None) -> TrainResult:
    """Train one network for ``kind`` and return it with the logged history."""
    kind = OptionKind.parse(kind)
    net = net if net is not None else build_for_kind(kind, curve_mode, net_cfg)
    frozen = None
    if kind.is_knock_in:
        frozen = _resolve_vanilla(vanilla, kind, curve_mode)
        frozen_digest = params_digest(frozen)
        for p in frozen.parameters():
            p.requires_grad_(False)

    sampling = SamplingConfig(kind=kind, curve_mode=curve_mode, train=True, seed=cfg.seed, count=cfg.batch_size)
    params = list(net.parameters())
    state = AdamState.zeros_like(params)
    total = cfg.total_steps
    history, window = [], []
    log_fh = open(log_path, "w", newline="") if log_path else None
    writer = None
    extra = {"kind": kind.value, "train": asdict(cfg), "net": asdict(net_cfg), "loss": asdict(loss_cfg)}
    try:
        for step in range(total):
            batch_index = step % cfg.batches_per_epoch
            batch = batch_for_index(sampling, batch_index)
            if frozen is None:
                terms = vanilla_loss_terms(net, batch, loss_cfg, kind)
            else:
                terms = knock_in_loss_terms(net, frozen, batch, loss_cfg, kind)
            loss = total_loss(terms)
            grads = torch.autograd.grad(loss, params)
            grads = [g.clone() for g in grads]
            if not math.isfinite(float(loss.detach())) or any(not torch.isfinite(g).all() for g in grads):
                parts = {k: float(v.mean()) for k, v in terms.items()}
                raise TrainingError(f"non-finite loss or gradient at step {step} (batch {batch_index}): {parts}")
            grad_norm = clip_global_norm(grads, cfg.clip_norm)
            lr = lr_at(step, total, cfg)
            adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)

            window.append(float(loss.detach()))
            if len(window) > cfg.log_every:
                window.pop(0)
            if (step + 1) % cfg.log_every == 0 or step + 1 == total:
                row = {"step": step + 1, "lr": lr, "loss": float(loss.detach()),
                       "loss_avg": sum(window) / len(window), "grad_norm": grad_norm}
                row.update({k: float(v.detach().mean()) for k, v in terms.items()})
                if not math.isfinite(row["loss_avg"]):
                    raise TrainingError(f"non-finite moving-average loss at step {step + 1}")
                history.append(row)
                log.info("step %d lr %.2e loss %.5g avg %.5g", row["step"], lr, row["loss"], row["loss_avg"])
                if log_fh is not None:
                    if writer is None:
                        writer = csv.DictWriter(log_fh, fieldnames=list(row))
                        writer.writeheader()
                    writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
                    log_fh.flush()
            if checkpoint_path and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, net, {**extra, "steps_done": step + 1})
    finally:
        if log_fh is not None:
            log_fh.close()
        if frozen is not None:
            if params_digest(frozen) != frozen_digest:
                raise TrainingError("frozen vanilla network was modified during knock-in training")
    if checkpoint_path:
        save_checkpoint(checkpoint_path, net, {**extra, "steps_done": total})
    return TrainResult(net, history)
