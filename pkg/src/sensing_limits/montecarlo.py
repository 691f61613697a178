"""Desk-scale random-matrix experiments validating the analytic pipeline."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidParameterError, NumericError
from .freeconv import rect_convolve, semicircle_convolve
from .measures import measure_from_samples, wasserstein2
from .priors import PriorSpec, sample_matrix

MAX_DENSE_DIM = 4000  # dense eigensolvers only, by policy


@dataclass(frozen=True)
class MCReport:
    experiment: str
    d: int
    L: int | None
    reps: int
    seed: int
    statistic: float
    threshold: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def _check_dims(d, minimum):
    if d < minimum:
        raise InvalidParameterError(f"need d >= {minimum}")
    if d > MAX_DENSE_DIM:
        raise InvalidParameterError(f"dense verification capped at d = {MAX_DENSE_DIM}")


def _goe_noise(rng, d):
    a = rng.standard_normal((d, d)) / np.sqrt(2 * d)
    return a + a.T


def _smooth(pool, d, reps):
    length = pool.max() - pool.min()
    return measure_from_samples(pool, 2.0 * length / np.sqrt(d * reps))


def check_free_convolution(prior: PriorSpec, t: float, d: int = 2000,
                           reps: int = 5, seed: int = 0,
                           threshold: float = 0.05) -> MCReport:
    """Eigenvalues of S + sqrt(t) GOE pooled over draws, against the computed
    free convolution of the prior's limiting measure."""
    if t < 0:
        raise InvalidParameterError("t must be nonnegative")
    _check_dims(d, 200)
    target = semicircle_convolve(prior.limiting_measure, t).measure
    pool = []
    for rep in range(reps):
        rng = np.random.default_rng((seed, rep))
        s = sample_matrix(prior, d, seed=(seed, rep, 1))
        if t > 0:
            s = s + np.sqrt(t) * _goe_noise(rng, d)
        try:
            pool.append(np.linalg.eigvalsh(s))
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigensolver failed: {exc}") from exc
    stat = wasserstein2(_smooth(np.concatenate(pool), d, reps), target)
    return MCReport(f"free_convolution[t={t:g}]", d, None, reps, seed,
                    float(stat), threshold, bool(stat <= threshold))


def check_rect_convolution(prior: PriorSpec, t: float, beta: float | None = None,
                           d: int = 1000, reps: int = 5, seed: int = 0,
                           threshold: float = 0.05) -> MCReport:
    """Symmetrized singular values of S + sqrt(t) Z pooled over draws, against
    the computed rectangular free convolution."""
    if t < 0:
        raise InvalidParameterError("t must be nonnegative")
    _check_dims(d, 200)
    if beta is None:
        beta = prior.beta
    L = int(round(d / beta))
    target = rect_convolve(prior.limiting_measure, t, beta).measure
    pool = []
    for rep in range(reps):
        rng = np.random.default_rng((seed, rep))
        s = sample_matrix(prior, d, L=L, seed=(seed, rep, 1))
        if t > 0:
            s = s + np.sqrt(t) * rng.standard_normal((d, L)) * (d * L) ** -0.25
        try:
            sv = np.linalg.svd(s, compute_uv=False)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"svd failed: {exc}") from exc
        pool.append(np.concatenate([sv, -sv]))
    stat = wasserstein2(_smooth(np.concatenate(pool), d, reps), target)
    return MCReport(f"rect_convolution[t={t:g},beta={beta:g}]", d, L, reps, seed,
                    float(stat), threshold, bool(stat <= threshold))


def check_goe_denoising(r: float, d: int = 1000, reps: int = 10, seed: int = 0,
                        threshold: float = 0.02) -> MCReport:
    """Posterior-mean denoising of a GOE signal from sqrt(r) S + GOE noise.

    The posterior mean is entrywise sqrt(r)/(1+r) times the observation; the
    empirical normalized error is compared to the analytic 1/(1+r)."""
    if r < 0:
        raise InvalidParameterError("r must be nonnegative")
    _check_dims(d, 200)
    errs = []
    for rep in range(reps):
        rng = np.random.default_rng((seed, rep))
        s = _goe_noise(rng, d)
        z = _goe_noise(rng, d)
        y = np.sqrt(r) * s + z
        s_hat = (np.sqrt(r) / (1.0 + r)) * y
        errs.append(np.sum((s - s_hat) ** 2) / d)
    analytic = 1.0 / (1.0 + r)
    stat = abs(np.mean(errs) - analytic) / analytic
    return MCReport(f"goe_denoising[r={r:g}]", d, None, reps, seed,
                    float(stat), threshold, bool(stat <= threshold))


def check_clt_universality(ensemble: str, prior: PriorSpec, d: int = 200,
                           n_samples: int = 2000, seed: int = 0,
                           threshold: float | None = None) -> MCReport:
    """Kolmogorov-Smirnov test of Tr[Phi S] against N(0, 2 tr S^2) for one
    fixed signal draw and n_samples sensing matrices."""
    if d < 5:
        raise InvalidParameterError("need d >= 5")
    if n_samples < 1000:
        raise InvalidParameterError("need n_samples >= 1000")
    if threshold is None:
        threshold = 1.5 * 1.63 / np.sqrt(n_samples)
    rng = np.random.default_rng((seed, 0))
    s = sample_matrix(prior, d, seed=(seed, 1))
    var_target = 2.0 * np.sum(s * s) / d

    tvals = np.empty(n_samples)
    if ensemble == "goe":
        for i in range(n_samples):
            tvals[i] = np.sum(_goe_noise(rng, d) * s)
    elif ensemble == "iid_rademacher":
        scale_off = 1.0 / np.sqrt(d)
        scale_diag = np.sqrt(2.0 / d)
        for i in range(n_samples):
            signs = rng.integers(0, 2, size=(d, d)) * 2.0 - 1.0
            phi = np.triu(signs, 1)
            phi = (phi + phi.T) * scale_off
            np.fill_diagonal(phi, np.diagonal(signs) * scale_diag)
            tvals[i] = np.sum(phi * s)
    elif ensemble == "rank_one_centered":
        for i in range(n_samples):
            x = rng.standard_normal(d)
            tvals[i] = (x @ s @ x - np.trace(s)) / np.sqrt(d)
    else:
        raise InvalidParameterError(f"unknown ensemble {ensemble!r}")

    stat = _ks_statistic(tvals / np.sqrt(var_target))
    return MCReport(f"clt_universality[{ensemble}]", d, None, n_samples, seed,
                    float(stat), float(threshold), bool(stat <= threshold))


def _ks_statistic(standardized):
    from scipy.stats import norm

    x = np.sort(standardized)
    n = x.size
    cdf = norm.cdf(x)
    up = np.max(np.arange(1, n + 1) / n - cdf)
    down = np.max(cdf - np.arange(0, n) / n)
    return max(up, down)