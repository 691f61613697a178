"""Signal ensembles: limiting spectral measures, second moments, and
finite-dimensional samplers for the Monte Carlo checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, UnsupportedParameterError
from .measures import (
    SpectralMeasure,
    marchenko_pastur,
    measure_from_samples,
    moment,
    semicircle,
    symmetrized_rect_gaussian,
)

# deterministic default used when a prior needs an empirical limiting measure
_LAW_SAMPLE_DEFAULTS = dict(d=1000, reps=8, seed=20210)


@dataclass(frozen=True)
class PriorSpec:
    """A signal ensemble with its limiting measure and scalar summaries.

    kind              'goe' | 'wishart' | 'rect_gaussian' | 'rect_product' | 'empirical'
    params            constructor parameters (kappa, beta, rank_ratio, ...)
    rho               limiting normalized second moment of the signal
    psd               True when the ensemble is positive semidefinite
    limiting_measure  eigenvalue law (symmetric case) or symmetrized
                      singular-value law (rectangular case)
    rectangular       True for d x L ensembles
    """

    kind: str
    params: tuple
    rho: float
    psd: bool
    limiting_measure: SpectralMeasure
    rectangular: bool

    @property
    def beta(self):
        return dict(self.params).get("beta")

    def param(self, name, default=None):
        return dict(self.params).get(name, default)


def build_prior(kind: str, **params) -> PriorSpec:
    """Construct one of the supported priors.

    goe                         unit-variance GOE, rho = 1
    wishart(kappa)              (1/m) W^T W with m = ceil(kappa d); kappa != 1
    rect_gaussian(beta)         i.i.d. entries of variance 1/sqrt(dL)
    rect_product(beta, rank_ratio)  normalized product of two Gaussian factors
    empirical(measure, rho, psd[, beta])  user-supplied limiting law
    """
    if kind == "goe":
        _reject_extra(params, ())
        return PriorSpec("goe", (), 1.0, False, semicircle(1.0), False)

    if kind == "wishart":
        kappa = _require(params, "kappa")
        _reject_extra(params, ("kappa",))
        if kappa <= 0:
            raise InvalidParameterError(f"wishart needs kappa > 0, got {kappa}")
        if kappa == 1:
            raise UnsupportedParameterError(
                "wishart with kappa = 1 is not covered by the theory (the "
                "eigenvalue potential loses strong convexity); use kappa != 1")
        mu = marchenko_pastur(kappa)
        return PriorSpec("wishart", (("kappa", float(kappa)),),
                         1.0 + 1.0 / kappa, True, mu, False)

    if kind == "rect_gaussian":
        beta = _require(params, "beta")
        _reject_extra(params, ("beta",))
        if not 0 < beta <= 1:
            raise InvalidParameterError(f"beta must lie in (0, 1], got {beta}")
        mu = symmetrized_rect_gaussian(beta)
        rho = float(np.sqrt(beta) * moment(mu, 2))
        return PriorSpec("rect_gaussian", (("beta", float(beta)),), rho, False, mu, True)

    if kind == "rect_product":
        beta = _require(params, "beta")
        rank_ratio = _require(params, "rank_ratio")
        law = {**_LAW_SAMPLE_DEFAULTS}
        law.update({k: params[k] for k in ("d", "reps", "seed") if k in params})
        _reject_extra(params, ("beta", "rank_ratio", "d", "reps", "seed"))
        if not 0 < beta <= 1:
            raise InvalidParameterError(f"beta must lie in (0, 1], got {beta}")
        if rank_ratio <= 0:
            raise InvalidParameterError(f"rank_ratio must be positive, got {rank_ratio}")
        stub = PriorSpec("rect_product",
                         (("beta", float(beta)), ("rank_ratio", float(rank_ratio))),
                         1.0, False, symmetrized_rect_gaussian(beta), True)
        mu = sample_singular_law(stub, law["d"], law["reps"], law["seed"])
        rho = float(np.sqrt(beta) * moment(mu, 2))
        return PriorSpec("rect_product",
                         (("beta", float(beta)), ("rank_ratio", float(rank_ratio))),
                         rho, False, mu, True)

    if kind == "empirical":
        measure = _require(params, "measure")
        rho = _require(params, "rho")
        psd = bool(params.get("psd", False))
        beta = params.get("beta")
        _reject_extra(params, ("measure", "rho", "psd", "beta"))
        rectangular = beta is not None
        p = (("beta", float(beta)),) if rectangular else ()
        return PriorSpec("empirical", p, float(rho), psd, measure, rectangular)

    raise InvalidParameterError(f"unknown prior kind {kind!r}")


def _require(params, name):
    if name not in params:
        raise InvalidParameterError(f"missing required parameter {name!r}")
    return params[name]


def _reject_extra(params, allowed):
    extra = set(params) - set(allowed)
    if extra:
        raise InvalidParameterError(f"unexpected parameters {sorted(extra)}")


# ---------------------------------------------------------------------------
# samplers


def sample_matrix(prior: PriorSpec, d: int, L: int | None = None, seed=0) -> np.ndarray:
    """One matrix draw from the ensemble; bit-reproducible for a fixed seed."""
    if d < 2:
        raise InvalidParameterError("need d >= 2")
    rng = np.random.default_rng(seed)
    if prior.kind == "goe":
        return _goe(rng, d)
    if prior.kind == "wishart":
        kappa = prior.param("kappa")
        m = int(np.ceil(kappa * d))
        w = rng.standard_normal((m, d))
        return w.T @ w / m
    if prior.kind in ("rect_gaussian", "rect_product"):
        beta = prior.param("beta")
        if L is None:
            L = int(round(d / beta))
        if L < d:
            raise InvalidParameterError("rectangular samplers need L >= d")
        if prior.kind == "rect_gaussian":
            return rng.standard_normal((d, L)) * (d * L) ** -0.25
        rank = max(1, int(np.ceil(prior.param("rank_ratio") * np.sqrt(d * L))))
        u = rng.standard_normal((d, rank))
        v = rng.standard_normal((rank, L))
        # scale chosen so (1/sqrt(dL)) E Tr S S^T = 1 exactly
        return (u @ v) / np.sqrt(rank * np.sqrt(d * L))
    raise InvalidParameterError(f"prior kind {prior.kind!r} has no sampler")


def _goe(rng, d):
    a = rng.standard_normal((d, d)) / np.sqrt(2 * d)
    s = a + a.T  # off-diagonal variance 1/d, diagonal 2/d
    return s


def sample_singular_law(prior: PriorSpec, d: int, reps: int, seed=0) -> SpectralMeasure:
    """Pooled symmetrized singular-value (or eigenvalue) measure over draws.

    Eigenvalues for symmetric kinds, symmetrized singular values for
    rectangular kinds, smoothed onto the standard grid with a Gaussian kernel
    of bandwidth 2 (support length) / sqrt(d reps)."""
    if reps < 1:
        raise InvalidParameterError("need reps >= 1")
    pool = []
    for rep in range(reps):
        s = sample_matrix(prior, d, seed=(seed, rep))
        if prior.rectangular:
            sv = np.linalg.svd(s, compute_uv=False)
            pool.append(np.concatenate([sv, -sv]))
        else:
            pool.append(np.linalg.eigvalsh(s))
    pooled = np.concatenate(pool)
    support_len = pooled.max() - pooled.min()
    bw = 2.0 * support_len / np.sqrt(d * reps)
    return measure_from_samples(pooled, bw)