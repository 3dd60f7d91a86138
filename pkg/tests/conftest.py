import math

import numpy as np
import pytest

from bergomi_pinn.bergomi import BergomiParams, ForwardVarianceCurve, ParamPoint
from bergomi_pinn.sampler import SamplingConfig, batch_for_index

ACCEPTANCE_RESULTS = pytest.StashKey[dict]()


def make_point(kind="call", s=math.log(100.0), t=0.0, x1=0.0, x2=0.0, T=1.0, B=100.0, omega=0.0, k1=1.0, k2=10.0,
               theta=0.5, rho1=0.0, rho2=0.0, rho12=0.0, r=0.0, q=0.0, xi=0.04):
    curve = ForwardVarianceCurve.constant(xi) if np.ndim(xi) == 0 else ForwardVarianceCurve.nine_segment(xi)
    params = BergomiParams(omega, k1, k2, theta, rho1, rho2, rho12, r, q, curve)
    return ParamPoint(s, t, x1, x2, T, B, params, kind)


@pytest.fixture
def point_factory():
    return make_point


@pytest.fixture
def train_batch():
    def build(kind="call", curve_mode="constant", n=64, seed=11, index=0):
        return batch_for_index(SamplingConfig(kind=kind, curve_mode=curve_mode, seed=seed, count=n), index)

    return build


@pytest.fixture
def record_criterion(request):
    """Record one acceptance line, ``record_criterion(number, passed, detail)``.

    Results live on the pytest config rather than in a module global, since
    this file can be imported under two module names.
    """
    results = request.config.stash.setdefault(ACCEPTANCE_RESULTS, {})

    def record(number: int, passed: bool, detail: str) -> None:
        results[number] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
