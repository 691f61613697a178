import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from sensing_limits import (
    DivergenceError,
    DomainError,
    InvalidParameterError,
    SpectralMeasure,
    cauchy_transform,
    load_measure,
    log_abs_moment,
    log_energy,
    marchenko_pastur,
    measure_from_samples,
    moment,
    point_mass,
    save_measure,
    semicircle,
    symmetrized_rect_gaussian,
    wasserstein2,
)


# ---------------------------------------------------------------------------
# constructors


def test_semicircle_support_and_moments():
    mu = semicircle(1.0)
    assert abs(mu.total_mass() - 1) < 1e-8
    assert abs(moment(mu, 2) - 1.0) < 1e-6
    lo, hi = mu.support_bounds()
    assert abs(lo + 2) < 1e-3 and abs(hi - 2) < 1e-3


def test_semicircle_scaling():
    mu = semicircle(4.0)
    assert abs(moment(mu, 2) - 4.0) < 4e-6
    _, hi = mu.support_bounds()
    assert abs(hi - 4) < 2 * mu.spacing


def test_semicircle_rejects_bad_variance():
    with pytest.raises(InvalidParameterError):
        semicircle(0.0)
    with pytest.raises(InvalidParameterError):
        semicircle(-1.0)


def test_marchenko_pastur_atom():
    mu = marchenko_pastur(0.5)
    assert mu.atoms == ((0.0, 0.5),)
    assert abs(mu.total_mass() - 1) < 1e-8


def test_marchenko_pastur_moments():
    mu = marchenko_pastur(2.0)
    assert mu.atoms == ()
    assert abs(moment(mu, 1) - 1.0) < 1e-6
    assert abs(moment(mu, 2) - 1.5) < 1e-6


def test_marchenko_pastur_edges_kappa_one():
    lam_minus = (1 - 1.0) ** 2
    lam_plus = (1 + 1.0) ** 2
    assert lam_minus == 0.0 and lam_plus == 4.0
    mu = marchenko_pastur(1.0)
    _, hi = mu.support_bounds()
    assert abs(hi - 4.0) < 2e-3


@pytest.mark.parametrize("kappa", [0.25, 0.5, 2.0, 4.0])
def test_marchenko_pastur_second_moment_sweep(kappa):
    mu = marchenko_pastur(kappa)
    assert abs(moment(mu, 2) - (1 + 1 / kappa)) < 1e-6


def test_rect_gaussian_reduces_to_semicircle():
    mu = symmetrized_rect_gaussian(1.0)
    assert wasserstein2(mu, semicircle(1.0)) < 1e-4
    assert abs(moment(mu, 2) - 1.0) < 1e-6


def test_rect_gaussian_second_moment():
    mu = symmetrized_rect_gaussian(0.25)
    assert abs(moment(mu, 2) - 2.0) < 1e-3


def test_rect_gaussian_rejects_bad_beta():
    for beta in (0.0, -0.1, 1.5):
        with pytest.raises(InvalidParameterError):
            symmetrized_rect_gaussian(beta)


def test_symmetric_constructors_even_density():
    for mu in (semicircle(1.0), symmetrized_rect_gaussian(0.5)):
        assert np.allclose(mu.grid, -mu.grid[::-1], atol=1e-12)
        assert np.allclose(mu.density, mu.density[::-1], atol=1e-8)


def test_measure_validation():
    with pytest.raises(InvalidParameterError):
        SpectralMeasure(np.array([0.0, 1.0]), np.array([2.0, 2.0]))  # mass 2
    with pytest.raises(InvalidParameterError):
        SpectralMeasure(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        SpectralMeasure(np.array([0.0, 1.0]), np.array([-1.0, 3.0]))


# ---------------------------------------------------------------------------
# Cauchy transform


def test_cauchy_semicircle_closed_form():
    mu = semicircle(1.0)
    expected = 1j * (1 - np.sqrt(2))  # (z - sqrt(z^2 - 4))/2 at z = 2i
    assert abs(cauchy_transform(mu, 2j) - expected) < 1e-6


def test_cauchy_point_mass():
    pm = point_mass(0.0)
    assert abs(cauchy_transform(pm, 1j) - (-1j)) < 1e-14


def test_cauchy_large_z_mass():
    mu = marchenko_pastur(2.0)
    z = 1e6 + 1e3j
    assert abs(cauchy_transform(mu, z) * z - 1.0) < 1e-4


def test_cauchy_halfplane_sign_and_domain():
    mu = semicircle(1.0)
    for z in (0.3 + 0.5j, -1.0 + 0.01j, 2.5 + 2j):
        assert cauchy_transform(mu, z).imag < 0
    with pytest.raises(DomainError):
        cauchy_transform(mu, 1.0 - 1j)
    with pytest.raises(DomainError):
        cauchy_transform(mu, 1.0)


@pytest.mark.parametrize("mu,inner", [
    (semicircle(1.0), (-1.8, 1.8)),
    (marchenko_pastur(2.0), (0.4, 2.5)),
    (symmetrized_rect_gaussian(0.5), (0.7, 1.5)),
])
def test_density_recovery_from_cauchy(mu, inner):
    # -(1/pi) Im g(x + i eta) matches the stored density away from the edges
    xs = np.linspace(inner[0], inner[1], 41)
    rec = np.array([-cauchy_transform(mu, x + 1e-6j).imag / np.pi for x in xs])
    stored = np.interp(xs, mu.grid, mu.density)
    assert np.max(np.abs(rec - stored)) < 1e-3


# ---------------------------------------------------------------------------
# log kernels


def brute_force_log_energy(density, lo, hi):
    inner = lambda y, x: density(x) * density(y) * np.log(abs(x - y) + 1e-300)
    val, _ = integrate.dblquad(inner, lo, hi, lo, hi, epsabs=1e-9, epsrel=1e-9)
    return val


def test_log_energy_semicircle_vs_brute_force():
    dens = lambda x: np.sqrt(max(4 - x * x, 0.0)) / (2 * np.pi)
    oracle = brute_force_log_energy(dens, -2, 2)
    assert abs(oracle - (-0.25)) < 1e-5  # the stated closed form
    assert abs(log_energy(semicircle(1.0)) - oracle) < 1e-4


def test_log_energy_scaling_law():
    # Sigma(s mu) = log s + Sigma(mu)
    base = log_energy(semicircle(1.0))
    rng = np.random.default_rng(5)
    for s in rng.uniform(0.3, 3.0, size=10):
        scaled = log_energy(semicircle(s * s))
        assert abs(scaled - (np.log(s) + base)) < 1e-6


def test_log_energy_rejects_atoms():
    with pytest.raises(DivergenceError):
        log_energy(marchenko_pastur(0.5))
    with pytest.raises(DivergenceError):
        log_energy(point_mass(1.0))


def test_log_abs_moment_semicircle():
    val = log_abs_moment(semicircle(1.0))
    quad_val, _ = integrate.quad(
        lambda x: np.sqrt(4 - x * x) / (2 * np.pi) * np.log(abs(x)),
        -2, 2, points=[0.0], limit=200)
    assert abs(quad_val - (-0.5)) < 1e-8
    assert abs(val - quad_val) < 1e-4


def test_log_abs_moment_narrow_bump_at_e():
    # narrow bump at e as the limiting check of log|x| against a point mass
    center = np.e
    width = 0.01
    grid = np.linspace(center - 10 * width, center + 10 * width, 4096)
    dens = np.exp(-0.5 * ((grid - center) / width) ** 2)
    dens /= np.trapezoid(dens, grid)
    mu = SpectralMeasure(grid, dens)
    assert abs(log_abs_moment(mu) - 1.0) < 1e-4


def test_log_abs_moment_symmetry():
    mu = symmetrized_rect_gaussian(0.5)
    total = log_abs_moment(mu)
    pos = mu.grid > 0
    half = 2 * np.trapezoid(mu.density[pos] * np.log(mu.grid[pos]), mu.grid[pos])
    assert abs(total - half) < 1e-3


def test_log_abs_moment_rejects_atom_at_zero():
    with pytest.raises(DivergenceError):
        log_abs_moment(marchenko_pastur(0.5))


# ---------------------------------------------------------------------------
# moments and W2


def test_moment_zeroth_is_mass():
    for mu in (semicircle(2.0), marchenko_pastur(0.5), point_mass(3.0)):
        assert abs(moment(mu, 0) - 1.0) < 1e-8


def test_moment_rejects_negative_order():
    with pytest.raises(InvalidParameterError):
        moment(semicircle(1.0), -1)


def test_w2_identity_and_point_masses():
    mu = marchenko_pastur(2.0)
    assert wasserstein2(mu, mu) < 1e-12
    assert abs(wasserstein2(point_mass(1.0), point_mass(-2.0)) - 3.0) < 1e-12


def test_w2_semicircle_scaling():
    # dilation coupling: W2(sc(1), sc(1.21)) = |1 - 1.1| * sqrt(second moment)
    w = wasserstein2(semicircle(1.0), semicircle(1.21))
    assert abs(w - 0.1) < 2e-3


def test_w2_atom_plus_density():
    mu = marchenko_pastur(0.5)
    nu = marchenko_pastur(0.5)
    assert wasserstein2(mu, nu) < 1e-12


# ---------------------------------------------------------------------------
# sampling and serialization


def test_measure_from_samples_mass_and_moment():
    rng = np.random.default_rng(0)
    samples = rng.standard_normal(20000)
    mu = measure_from_samples(samples, 0.05)
    assert abs(mu.total_mass() - 1) < 1e-8
    assert abs(moment(mu, 2) - samples.var()) < 5e-3


def test_serialization_round_trip_bit_exact():
    mu = marchenko_pastur(0.5)
    buf = io.StringIO()
    save_measure(mu, buf)
    text = buf.getvalue()
    assert text.startswith("# spectral-measure v1\n")
    loaded = load_measure(io.StringIO(text))
    buf2 = io.StringIO()
    save_measure(loaded, buf2)
    assert buf2.getvalue() == text
    assert np.array_equal(loaded.grid, mu.grid)
    assert np.array_equal(loaded.density, mu.density)
    assert loaded.atoms == mu.atoms


@settings(max_examples=20, deadline=None)
@given(variance=st.floats(0.1, 5.0), loc=st.floats(-3.0, 3.0),
       mass=st.floats(0.05, 0.5))
def test_serialization_round_trip_property(variance, loc, mass, tmp_path_factory):
    base = semicircle(variance)
    dens = base.density * (1 - mass)
    mu = SpectralMeasure(base.grid, dens, ((loc, mass),))
    buf = io.StringIO()
    save_measure(mu, buf)
    loaded = load_measure(io.StringIO(buf.getvalue()))
    assert np.array_equal(loaded.grid, mu.grid)
    assert np.array_equal(loaded.density, mu.density)
    assert loaded.atoms == mu.atoms


def test_load_rejects_bad_header():
    with pytest.raises(InvalidParameterError):
        load_measure(io.StringIO("# not-a-measure\n1.0 0.5\n"))
