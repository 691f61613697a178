import numpy as np
import pytest

from sensing_limits import (
    ConvergenceError,
    DomainError,
    InvalidParameterError,
    log_energy,
    marchenko_pastur,
    moment,
    point_mass,
    psi_p0,
    psi_p0_prime,
    psi_rec,
    psi_rec_prime,
    rect_convolve,
    semicircle,
    semicircle_convolve,
    symmetrized_rect_gaussian,
    wasserstein2,
)
from sensing_limits.freeconv import (
    RESIDUAL_LIMIT,
    _psi_p0_prime_fd,
    _psi_rec_prime_fd,
    psi_rec_constant,
)


def goe_psi(r):
    return -0.25 * np.log(1 + r) - 0.25


def goe_psi_prime(r):
    return -1.0 / (4 * (1 + r))


def gauss_rect_psi(r):
    return -0.5 * np.log(1 + r)


# ---------------------------------------------------------------------------
# semicircular convolution


def test_point_mass_convolves_to_semicircle():
    res = semicircle_convolve(point_mass(0.0), 1.0)
    assert wasserstein2(res.measure, semicircle(1.0)) < 1e-3
    assert res.max_residual <= RESIDUAL_LIMIT


def test_semicircle_plus_semicircle():
    res = semicircle_convolve(semicircle(1.0), 1.0)
    assert wasserstein2(res.measure, semicircle(2.0)) < 1e-3
    assert res.max_residual <= RESIDUAL_LIMIT


def test_variance_additivity():
    mu = marchenko_pastur(2.0)
    res = semicircle_convolve(mu, 0.7)
    assert abs(moment(res.measure, 2) - (moment(mu, 2) + 0.7)) < 1e-4


def test_convolve_t_zero_returns_input():
    mu = semicircle(1.0)
    res = semicircle_convolve(mu, 0.0)
    assert res.measure is mu
    assert res.iterations == 0


def test_convolve_rejects_negative_t():
    with pytest.raises(InvalidParameterError):
        semicircle_convolve(semicircle(1.0), -0.5)


def test_associativity_in_noise():
    mu = marchenko_pastur(2.0)
    two_step = semicircle_convolve(semicircle_convolve(mu, 0.6).measure, 0.9).measure
    one_step = semicircle_convolve(mu, 1.5).measure
    assert wasserstein2(two_step, one_step) < 1e-3


def test_convolution_with_atom_prior():
    # the Marchenko-Pastur atom smears into a bump; mass must be conserved
    res = semicircle_convolve(marchenko_pastur(0.5), 1.0)
    m = res.measure
    assert m.atoms == ()
    assert abs(m.total_mass() - 1) < 1e-8
    assert abs(moment(m, 2) - (3.0 + 1.0)) < 1e-4


# ---------------------------------------------------------------------------
# rectangular convolution


def test_rect_pure_noise_is_rect_gaussian():
    for beta in (1.0, 0.5):
        res = rect_convolve(point_mass(0.0), 1.0, beta)
        assert wasserstein2(res.measure, symmetrized_rect_gaussian(beta)) < 2e-3


def test_rect_beta_one_reduces_to_semicircle_convolution():
    res = rect_convolve(symmetrized_rect_gaussian(1.0), 1.0, 1.0)
    assert wasserstein2(res.measure, semicircle(2.0)) < 2e-3


def test_rect_second_moment_additivity():
    mu = symmetrized_rect_gaussian(0.5)
    res = rect_convolve(mu, 1.0, 0.5)
    expected = moment(mu, 2) + 1.0 / np.sqrt(0.5)
    assert abs(moment(res.measure, 2) - expected) < 1e-3


def test_rect_rejects_bad_parameters():
    mu = symmetrized_rect_gaussian(0.5)
    with pytest.raises(InvalidParameterError):
        rect_convolve(mu, 1.0, 1.5)
    with pytest.raises(InvalidParameterError):
        rect_convolve(mu, -1.0, 0.5)
    with pytest.raises(InvalidParameterError):
        rect_convolve(marchenko_pastur(2.0), 1.0, 0.5)  # not symmetric


# ---------------------------------------------------------------------------
# symmetric denoising potential


def test_psi_p0_goe_closed_form():
    mu = semicircle(1.0)
    for r in (0.1, 1.0, 10.0):
        assert abs(psi_p0(mu, r) - goe_psi(r)) < 1e-4


def test_psi_p0_small_r_limit():
    assert abs(psi_p0(semicircle(1.0), 1e-4) - (-0.25)) < 1e-3
    assert abs(psi_p0(marchenko_pastur(2.0), 1e-4) - (-0.25)) < 2e-3


def test_psi_p0_rejects_nonpositive_r():
    with pytest.raises(DomainError):
        psi_p0(semicircle(1.0), 0.0)
    with pytest.raises(DomainError):
        psi_p0(semicircle(1.0), -1.0)


def test_psi_p0_prime_goe_values():
    mu = semicircle(1.0)
    assert abs(psi_p0_prime(mu, 1.0) - (-0.125)) < 1e-4
    assert abs(psi_p0_prime(mu, 0.01) - (-1 / 4.04)) < 1e-3


def test_psi_p0_prime_large_r_vanishes():
    val = psi_p0_prime(marchenko_pastur(2.0), 1e3)
    assert -1e-3 < val <= 0


def test_psi_p0_prime_matches_finite_difference():
    # the flow derivative and the plain finite difference agree to FD accuracy
    mu = semicircle(1.0)
    for r in (0.5, 2.0, 20.0):
        assert abs(psi_p0_prime(mu, r) - _psi_p0_prime_fd(mu, r)) < 2e-4


def test_psi_p0_monotone_convex_lipschitz():
    mu = marchenko_pastur(2.0)
    rho = 1.5
    rs = np.geomspace(1e-3, 1e3, 25)
    vals = np.array([psi_p0(mu, r) for r in rs])
    diffs = np.diff(vals)
    assert np.all(diffs <= 1e-9)
    # Lipschitz bound rho/4 on consecutive pairs
    assert np.all(np.abs(diffs) <= rho / 4 * np.diff(rs) + 1e-6)
    # convexity via second divided differences
    for i in range(len(rs) - 2):
        dd = ((vals[i + 2] - vals[i + 1]) / (rs[i + 2] - rs[i + 1])
              - (vals[i + 1] - vals[i]) / (rs[i + 1] - rs[i]))
        assert dd >= -1e-6


# ---------------------------------------------------------------------------
# rectangular denoising potential


def test_psi_rec_gaussian_oracle_beta_one():
    mu = symmetrized_rect_gaussian(1.0)
    assert abs(psi_rec(mu, 1.0, 1.0) - gauss_rect_psi(1.0)) < 1e-3
    assert abs(psi_rec_constant(mu, 1.0) - (-0.25)) < 1e-3


def test_psi_rec_gaussian_oracle_beta_half():
    # the per-entry scalar reduction holds at every aspect ratio
    mu = symmetrized_rect_gaussian(0.5)
    for r in (0.3, 1.0, 5.0):
        assert abs(psi_rec(mu, r, 0.5) - gauss_rect_psi(r)) < 1e-3


def test_psi_rec_normalization_at_tiny_r():
    mu = symmetrized_rect_gaussian(0.5)
    assert psi_rec(mu, 1e-6, 0.5) == 0.0


def test_psi_rec_rejects_bad_arguments():
    mu = symmetrized_rect_gaussian(0.5)
    with pytest.raises(DomainError):
        psi_rec(mu, 0.0, 0.5)
    with pytest.raises(InvalidParameterError):
        psi_rec(mu, 1.0, 2.0)


def test_psi_rec_prime_gaussian_values():
    mu1 = symmetrized_rect_gaussian(1.0)
    assert abs(psi_rec_prime(mu1, 1.0, 1.0) - (-0.25)) < 1e-3
    assert abs(psi_rec_prime(mu1, 0.01, 1.0) - (-1 / 2.02)) < 2e-3
    mu5 = symmetrized_rect_gaussian(0.5)
    assert abs(psi_rec_prime(mu5, 1.0, 0.5) - (-0.25)) < 1e-3


def test_psi_rec_prime_matches_finite_difference():
    mu = symmetrized_rect_gaussian(0.5)
    for r in (0.5, 2.0):
        assert abs(psi_rec_prime(mu, r, 0.5) - _psi_rec_prime_fd(mu, r, 0.5)) < 2e-4


def test_psi_rec_monotone_convex_lipschitz():
    mu = symmetrized_rect_gaussian(0.5)
    rho = np.sqrt(0.5) * moment(mu, 2)
    rs = np.geomspace(1e-3, 1e3, 19)
    vals = np.array([psi_rec(mu, r, 0.5) for r in rs])
    diffs = np.diff(vals)
    assert np.all(diffs <= 1e-9)
    assert np.all(np.abs(diffs) <= rho / 2 * np.diff(rs) + 1e-6)
    for i in range(len(rs) - 2):
        dd = ((vals[i + 2] - vals[i + 1]) / (rs[i + 2] - rs[i + 1])
              - (vals[i + 1] - vals[i]) / (rs[i + 1] - rs[i]))
        assert dd >= -1e-6
