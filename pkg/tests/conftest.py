import numpy as np
import pytest

from iforge.acc_barrier import AccBarrierParams, build_barrier
from iforge.lk_synthesis import BarrierCertificate
from iforge.polyalg import Polynomial
from iforge.safety_filter import FilterGains
from iforge.vehicle import LkBounds, VehicleParams


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


@pytest.fixture(scope="session")
def bounds():
    return LkBounds()


@pytest.fixture(scope="session")
def acc_params():
    return AccBarrierParams()


@pytest.fixture(scope="session")
def acc_bar(acc_params):
    return build_barrier(acc_params)


@pytest.fixture(scope="session")
def gains():
    return FilterGains()


@pytest.fixture(scope="session")
def stub_cert(bounds):
    """Quadratic stand-in barrier for filter/simulator mechanics tests.

    h = 0.5 - mean of squared scaled states; not a synthesized certificate,
    just a well-behaved h with the right calling surface.
    """
    svars = ("x1", "x2", "x3", "x4")
    h_hat = Polynomial.zero(svars)
    for v in svars:
        pv = Polynomial.variable(v, svars)
        h_hat = h_hat + 0.25 * pv * pv
    return BarrierCertificate(
        alpha=2, kappa=0.5, h_hat=h_hat, gamma_synth=2.0, gamma_max=2.0,
        controller=None, scales=bounds.state_scales, d_max=bounds.d_max,
        v_low=bounds.v_low, v_high=bounds.v_high, epsilon=1e-4,
        kappa_history=[0.5], iterations=0)
