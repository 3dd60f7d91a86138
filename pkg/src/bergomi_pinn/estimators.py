"""Scikit-learn style wrappers: a trainable network pricer and a Monte Carlo benchmark.

Both take the flat point layout of :func:`bergomi_pinn.bergomi.columns` as
``X`` (16 columns for a constant curve, 24 for nine segments). The network
pricer is trained without labels, so ``fit`` ignores ``y``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bergomi import PointBatch, columns
from .evaluation import benchmark_batch, price_batch
from .losses import LossConfig
from .mc import McConfig
from .options import OptionKind
from .trainer import NetConfig, TrainConfig, train


def _points(X, curve_mode: str) -> PointBatch:
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    width = len(columns(curve_mode))
    if X.shape[1] != width:
        raise ValueError(f"expected {width} columns for curve mode {curve_mode!r}, got {X.shape[1]}")
    return PointBatch(X, curve_mode)


class PinnPricer(RegressorMixin, BaseEstimator):
    """Physics-informed network pricer for one option kind.

    Knock-in kinds need ``vanilla``: a fitted ``PinnPricer`` for the vanilla
    of the same sign, or a vanilla checkpoint path. Knock-out kinds are
    priced by parity and need both a fitted knock-in pricer (``knock_in``)
    and the vanilla; they are never trained.
    """

    def __init__(self, kind="call", curve_mode="constant", n_layers=5, width=64, l1=3, l2=2,
                 samples=2_000_000, batch_size=1000, epochs=1, lr_start=1e-3, lr_end=1e-5,
                 clip_norm=10.0, seed=0, init_seed=0, lambda1=0.01, lambda2=25.0,
                 vanilla=None, knock_in=None):
        self.kind = kind
        self.curve_mode = curve_mode
        self.n_layers = n_layers
        self.width = width
        self.l1 = l1
        self.l2 = l2
        self.samples = samples
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.clip_norm = clip_norm
        self.seed = seed
        self.init_seed = init_seed
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.vanilla = vanilla
        self.knock_in = knock_in

    def _vanilla_net(self):
        v = self.vanilla
        if isinstance(v, PinnPricer):
            check_is_fitted(v, "net_")
            return v.net_
        if v is None:
            return None
        from .networks import load_checkpoint

        return load_checkpoint(v)[0] if isinstance(v, (str, bytes)) or hasattr(v, "__fspath__") else v

    def fit(self, X=None, y=None, **fit_params):
        kind = OptionKind.parse(self.kind)
        if kind.is_knock_out:
            raise ValueError("knock-out prices come from vanilla minus knock-in; fit those instead")
        result = train(
            kind,
            self.curve_mode,
            NetConfig(self.n_layers, self.width, self.l1, self.l2, self.init_seed),
            TrainConfig(batch_size=self.batch_size, samples=self.samples, epochs=self.epochs,
                        lr_start=self.lr_start, lr_end=self.lr_end, clip_norm=self.clip_norm, seed=self.seed),
            LossConfig(self.lambda1, self.lambda2),
            vanilla=self._vanilla_net() if kind.is_knock_in else None,
            **fit_params,
        )
        self.net_ = result.net
        self.history_ = result.history
        self.n_features_in_ = len(columns(self.curve_mode))
        return self

    @classmethod
    def from_network(cls, net, vanilla=None):
        """Wrap an already trained network (e.g. from a checkpoint)."""
        est = cls(kind=OptionKind.parse(net.kind).value, curve_mode=net.curve_mode, vanilla=vanilla)
        est.net_ = net
        est.history_ = []
        est.n_features_in_ = len(columns(net.curve_mode))
        return est

    def predict(self, X):
        kind = OptionKind.parse(self.kind)
        batch = _points(X, self.curve_mode)
        if kind.is_knock_out:
            ki = self.knock_in
            if not isinstance(ki, PinnPricer):
                raise ValueError("knock-out pricing needs a fitted knock-in PinnPricer as knock_in")
            check_is_fitted(ki, "net_")
            return price_batch(kind, batch, self._vanilla_net(), ki.net_)
        check_is_fitted(self, "net_")
        if kind.is_knock_in:
            return price_batch(kind, batch, knock_in=self.net_)
        return price_batch(kind, batch, vanilla=self.net_)


class MonteCarloBenchmark(BaseEstimator):
    """Monte Carlo reference prices; ``fit`` only validates the settings."""

    def __init__(self, kind="call", curve_mode="constant", paths=20_000, steps_per_year=250, seed=7_000_001,
                 antithetic=False, n_steps=None, target_se=None):
        self.kind = kind
        self.curve_mode = curve_mode
        self.paths = paths
        self.steps_per_year = steps_per_year
        self.seed = seed
        self.antithetic = antithetic
        self.n_steps = n_steps
        self.target_se = target_se

    def fit(self, X=None, y=None):
        OptionKind.parse(self.kind)
        self.mc_ = McConfig(self.paths, self.steps_per_year, self.seed, self.antithetic, self.n_steps)
        self.n_features_in_ = len(columns(self.curve_mode))
        return self

    def estimate(self, X) -> list:
        check_is_fitted(self, "mc_")
        return benchmark_batch(self.kind, _points(X, self.curve_mode), self.mc_, self.target_se)

    def predict(self, X):
        return np.array([e.mean for e in self.estimate(X)])

    def predict_with_se(self, X):
        est = self.estimate(X)
        return np.array([e.mean for e in est]), np.array([e.se for e in est])
