import numpy as np
import pytest
from conftest import goe_symmetric_oracle, rect_gaussian_oracle

from sensing_limits import (
    ChannelSpec,
    DomainError,
    InvalidParameterError,
    RSState,
    build_prior,
    f_rs,
    f_rs_spike,
    inf_r,
    psi_out,
    psi_out_prime,
    psi_p0_prime,
    solve,
    solve_rec,
    solve_spike,
    sweep,
)


# ---------------------------------------------------------------------------
# potential evaluation


def test_f_rs_at_origin(goe_prior, linear_channel):
    val = f_rs(goe_prior, linear_channel, 1.0, RSState(0.0, 0.0))
    expected = -0.5 - 0.5 * np.log(6 * np.pi)  # -1/4 + Psi_out(0) + 1/4
    assert abs(val - expected) < 1e-6


def test_f_rs_stationarity_in_q(goe_prior, linear_channel):
    # at fixed r, d f / d q vanishes where Psi_out'(q) = r / (4 alpha);
    # r = 2 places that point at q = 1/2 for the unit-noise linear channel
    alpha, r = 1.0, 2.0
    target = r / (4 * alpha)
    qs = np.linspace(0.01, 0.99, 197)
    primes = np.array([psi_out_prime(linear_channel, q, 1.0) for q in qs])
    q0 = float(np.interp(target, primes, qs))
    h = 1e-4
    up = f_rs(goe_prior, linear_channel, alpha, RSState(q0 + h, r))
    down = f_rs(goe_prior, linear_channel, alpha, RSState(q0 - h, r))
    assert abs((up - down) / (2 * h)) < 1e-4


def test_f_rs_validates_state(goe_prior, linear_channel):
    with pytest.raises(InvalidParameterError):
        RSState(-0.1, 0.0)
    with pytest.raises(DomainError):
        f_rs(goe_prior, linear_channel, 1.0, RSState(1.5, 0.0))


# ---------------------------------------------------------------------------
# inner minimization


def test_inf_r_goe_midpoint(goe_prior, linear_channel):
    r, val = inf_r(goe_prior, linear_channel, 1.0, 0.5)
    assert abs(r - 1.0) < 1e-3  # -1/(4(1+r)) = -1/8
    direct = f_rs(goe_prior, linear_channel, 1.0, RSState(0.5, r))
    assert abs(val - direct) < 1e-9


def test_inf_r_boundaries(goe_prior, linear_channel):
    r0, _ = inf_r(goe_prior, linear_channel, 1.0, 0.0)
    assert r0 == 0.0
    r_top, _ = inf_r(goe_prior, linear_channel, 1.0, 1.0)
    r_max = 4.0 * psi_out_prime(linear_channel, 1.0, 1.0)
    assert abs(r_top - r_max) < 1e-9


# ---------------------------------------------------------------------------
# symmetric solve


def test_solve_goe_oracle(goe_prior, linear_channel):
    res = solve(goe_prior, linear_channel, 1.0)
    q_oracle = goe_symmetric_oracle(1.0, 1.0)
    assert abs(res.q_star - q_oracle) < 1e-4
    assert abs(res.mmse_tensor - (1 - q_oracle ** 2)) < 2e-4
    assert res.converged
    assert not res.degenerate
    assert res.mmse_psd is None  # GOE is not PSD


def test_solve_stationarity_invariants(goe_prior, linear_channel):
    res = solve(goe_prior, linear_channel, 1.0)
    mu = goe_prior.limiting_measure
    resid_inner = psi_p0_prime(mu, res.r_star) + (1.0 - res.q_star) / 4
    assert abs(resid_inner) < 1e-7
    resid_outer = res.r_star - 4 * psi_out_prime(linear_channel, res.q_star, 1.0)
    assert abs(resid_outer) < 1e-6 * (1 + res.r_star)


def test_solve_branches_contain_q_star(goe_prior, linear_channel):
    res = solve(goe_prior, linear_channel, 1.0)
    assert any(abs(q - res.q_star) < 1e-12 for q, _ in res.branches)
    top = max(v for _, v in res.branches)
    assert abs(top - res.f_limit) < 1e-12


def test_solve_grid_independence(goe_prior, linear_channel):
    a = solve(goe_prior, linear_channel, 1.0, grid_size=257)
    b = solve(goe_prior, linear_channel, 1.0, grid_size=514)
    assert abs(a.f_limit - b.f_limit) < 1e-8


def test_solve_alpha_to_zero(goe_prior, wishart2_prior, linear_channel):
    res = solve(goe_prior, linear_channel, 1e-8)
    assert abs(res.q_star - 0.0) < 1e-3
    res_w = solve(wishart2_prior, linear_channel, 1e-8)
    assert abs(res_w.q_star - 1.0) < 1e-3  # posterior mean is the identity
    assert abs(res_w.mmse_psd - 0.5) < 1e-3


def test_solve_strong_signal(goe_prior):
    res = solve(goe_prior, ChannelSpec("linear", 1e-4), 50.0)
    assert res.q_star >= 0.999
    assert res.mmse_tensor <= 2e-3


def test_solve_mutual_information_sign(goe_prior, linear_channel):
    res = solve(goe_prior, linear_channel, 1.0)
    expected = -res.f_limit + psi_out(linear_channel, 1.0, 1.0)
    assert abs(res.mutual_info - expected) < 1e-12
    assert res.mutual_info > 0


def test_solve_rejects_rectangular_prior(rect_g1_prior, linear_channel):
    with pytest.raises(InvalidParameterError):
        solve(rect_g1_prior, linear_channel, 1.0)


# ---------------------------------------------------------------------------
# rectangular solve


def test_solve_rec_gaussian_oracle(rect_g1_prior, linear_channel):
    res = solve_rec(rect_g1_prior, linear_channel, 1.0)
    q_oracle = rect_gaussian_oracle(1.0, 1.0)
    assert abs(res.q_star - q_oracle) < 1e-4
    assert abs(res.mmse_tensor - (1 - q_oracle ** 2)) < 3e-4


def test_solve_rec_gaussian_oracle_beta_half(rect_g5_prior, linear_channel):
    # the scalar reduction of the Gaussian prior is aspect-ratio independent
    res = solve_rec(rect_g5_prior, linear_channel, 1.0)
    assert abs(res.q_star - rect_gaussian_oracle(1.0, 1.0)) < 5e-4


def test_solve_rec_limits(rect_g1_prior, linear_channel):
    res0 = solve_rec(rect_g1_prior, linear_channel, 1e-8)
    assert abs(res0.q_star) < 1e-3  # centered prior
    res_noise = solve_rec(rect_g1_prior, ChannelSpec("linear", 1e4), 1.0)
    assert res_noise.q_star < 1e-3
    assert abs(res_noise.mmse_tensor - 1.0) < 1e-2


def test_solve_rec_rejects_symmetric_prior(goe_prior, linear_channel):
    with pytest.raises(InvalidParameterError):
        solve_rec(goe_prior, linear_channel, 1.0)


# ---------------------------------------------------------------------------
# spiked tensor


@pytest.mark.parametrize("lam", [0.0, 1.0, 5.0])
@pytest.mark.parametrize("p", [2, 3])
def test_spike_potential_vanishes_at_zero(goe_prior, lam, p):
    assert abs(f_rs_spike(goe_prior, 0.0, lam, p)) < 1e-3


def test_spike_potential_goe_value(goe_prior):
    expected = 0.75 - 0.25 * np.log(5) - 0.25
    assert abs(f_rs_spike(goe_prior, 1.0, 1.0, 2) - expected) < 1e-4


def test_spike_flat_at_lambda_zero(goe_prior):
    q, f = solve_spike(goe_prior, 0.0, 2)
    assert q == 0.0 and f == 0.0


def test_spike_strong_signal(goe_prior):
    q, _ = solve_spike(goe_prior, 1e4, 2)
    assert abs(q - (1 - 1 / 4e4)) < 1e-3


def test_spike_monotone_in_lambda(goe_prior):
    lams = np.geomspace(0.1, 10.0, 7)
    qs = [solve_spike(goe_prior, lam, 2, grid_size=129)[0] for lam in lams]
    assert all(b >= a - 1e-8 for a, b in zip(qs, qs[1:]))


def test_spike_validates_arguments(goe_prior):
    with pytest.raises(InvalidParameterError):
        f_rs_spike(goe_prior, 0.5, -1.0, 2)
    with pytest.raises(InvalidParameterError):
        f_rs_spike(goe_prior, 0.5, 1.0, 1)
    with pytest.raises(DomainError):
        f_rs_spike(goe_prior, 1.5, 1.0, 2)


# ---------------------------------------------------------------------------
# sweep


def test_sweep_single_alpha_matches_solve(goe_prior, linear_channel):
    entry = sweep(goe_prior, linear_channel, [1.0])[0]
    direct = solve(goe_prior, linear_channel, 1.0)
    assert entry.error is None
    assert entry.result.q_star == direct.q_star
    assert entry.result.f_limit == direct.f_limit


def test_sweep_empty():
    prior = build_prior("goe")
    assert sweep(prior, ChannelSpec("linear", 1.0), []) == []


def test_sweep_monotone_q(goe_prior, linear_channel):
    alphas = list(np.geomspace(0.5, 8.0, 5))
    entries = sweep(goe_prior, linear_channel, alphas)
    qs = [e.result.q_star for e in entries]
    assert all(b >= a - 1e-8 for a, b in zip(qs, qs[1:]))
    for e, alpha in zip(entries, alphas):
        assert abs(e.result.q_star - goe_symmetric_oracle(alpha, 1.0)) < 2e-4


def test_sweep_validates_order(goe_prior, linear_channel):
    with pytest.raises(InvalidParameterError):
        sweep(goe_prior, linear_channel, [2.0, 1.0])
