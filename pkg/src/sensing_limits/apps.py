"""The two model applications mapped onto solver calls: extensive-width
quadratic teacher networks and bilinear sequence regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import DEFAULT_QUADRATURE, ChannelSpec, QuadratureSpec
from .errors import InvalidParameterError
from .priors import build_prior
from .solver import GRID_SIZE_DEFAULT, SolveResult, solve, solve_rec


@dataclass(frozen=True)
class NNProblem:
    """One-hidden-layer quadratic teacher: width ratio kappa = m/d,
    pre-activation noise delta, post-activation noise delta0 > 0, and
    sample ratio alpha = n/d^2."""

    kappa: float
    delta: float
    delta0: float
    alpha: float

    def __post_init__(self):
        if self.kappa <= 0 or self.kappa == 1:
            raise InvalidParameterError("kappa must be positive and != 1")
        if self.delta < 0:
            raise InvalidParameterError("delta must be nonnegative")
        if self.delta0 <= 0:
            raise InvalidParameterError("delta0 must be positive")
        if self.alpha <= 0:
            raise InvalidParameterError("alpha must be positive")


@dataclass(frozen=True)
class BSRProblem:
    """Bilinear sequence regression: aspect ratio beta = d/L, inner-rank
    scaling rank_ratio, output channel, and sample ratio alpha = n/(Ld)."""

    beta: float
    rank_ratio: float
    channel: ChannelSpec
    alpha: float

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise InvalidParameterError("beta must lie in (0, 1]")
        if self.rank_ratio <= 0:
            raise InvalidParameterError("rank_ratio must be positive")
        if self.alpha <= 0:
            raise InvalidParameterError("alpha must be positive")


def effective_nn_noise(kappa: float, delta: float, delta0: float) -> float:
    """Noise variance of the equivalent linear matrix channel."""
    return 2.0 * delta * (2.0 + delta) / kappa + delta0


def nn_generalization_mmse(p: NNProblem, grid_size: int = GRID_SIZE_DEFAULT,
                           quad: QuadratureSpec = DEFAULT_QUADRATURE
                           ) -> tuple[float, float]:
    """Limiting generalization error of the Bayes-optimal quadratic network.

    Builds the Wishart(kappa) prior and the linear channel at the effective
    noise, solves the symmetric model, and returns (q_star, kappa (rho - q_star)).
    """
    prior = build_prior("wishart", kappa=p.kappa)
    ch = ChannelSpec("linear", effective_nn_noise(p.kappa, p.delta, p.delta0))
    res = solve(prior, ch, p.alpha, grid_size=grid_size, quad=quad)
    return res.q_star, p.kappa * (prior.rho - res.q_star)


def bsr_mmse(p: BSRProblem, grid_size: int = GRID_SIZE_DEFAULT,
             quad: QuadratureSpec = DEFAULT_QUADRATURE,
             law_d: int = 1000, law_reps: int = 8, law_seed: int = 20210
             ) -> tuple[float, float]:
    """Limiting tensor MMSE of bilinear sequence regression.

    The signal is the normalized product of two Gaussian factor matrices; its
    limiting singular law is realized empirically by the product sampler.
    Returns (q_star, rho^2 - q_star^2).
    """
    prior = build_prior("rect_product", beta=p.beta, rank_ratio=p.rank_ratio,
                        d=law_d, reps=law_reps, seed=law_seed)
    res = solve_rec(prior, p.channel, p.alpha, grid_size=grid_size, quad=quad)
    return res.q_star, res.mmse_tensor


def nn_solve(p: NNProblem, grid_size: int = GRID_SIZE_DEFAULT,
             quad: QuadratureSpec = DEFAULT_QUADRATURE) -> SolveResult:
    """Full solver output for the equivalent matrix problem of NNProblem."""
    prior = build_prior("wishart", kappa=p.kappa)
    ch = ChannelSpec("linear", effective_nn_noise(p.kappa, p.delta, p.delta0))
    return solve(prior, ch, p.alpha, grid_size=grid_size, quad=quad)