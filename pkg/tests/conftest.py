import numpy as np
import pytest

from sensing_limits import build_prior, ChannelSpec


@pytest.fixture(scope="session")
def goe_prior():
    return build_prior("goe")


@pytest.fixture(scope="session")
def wishart2_prior():
    return build_prior("wishart", kappa=2.0)


@pytest.fixture(scope="session")
def wishart_half_prior():
    return build_prior("wishart", kappa=0.5)


@pytest.fixture(scope="session")
def rect_g1_prior():
    return build_prior("rect_gaussian", beta=1.0)


@pytest.fixture(scope="session")
def rect_g5_prior():
    return build_prior("rect_gaussian", beta=0.5)


@pytest.fixture(scope="session")
def linear_channel():
    return ChannelSpec("linear", 1.0)


def goe_symmetric_oracle(alpha, delta):
    """Closed-form maximizer for the GOE prior with the linear channel:
    eliminating r from the stationarity pair gives
    2 q^2 - (4 alpha + delta + 2) q + 4 alpha = 0 (smaller root)."""
    b = 4 * alpha + delta + 2
    disc = b * b - 32 * alpha
    return (b - np.sqrt(disc)) / 4


def rect_gaussian_oracle(alpha, delta):
    """Closed-form maximizer for the i.i.d. Gaussian rectangular prior:
    q^2 - (alpha + delta + 1) q + alpha = 0 (smaller root)."""
    b = alpha + delta + 1
    disc = b * b - 4 * alpha
    return (b - np.sqrt(disc)) / 2
