"""Replica-symmetric potential evaluation and sup-inf extremization.

The outer scan works on a cheap monotone-interpolant table of the denoising
potential (built once per prior and extended on demand); every reported
extremizer is then polished against the exact potential callables with the
damped stationarity fixed point q <- rho + k psi'(k alpha Psi'(q)), so the
stationarity residuals are controlled by the polish tolerance and not by the
table.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import channels as _ch
from . import freeconv as _fc
from .channels import DEFAULT_QUADRATURE, ChannelSpec, QuadratureSpec
from .errors import ConvergenceError, DomainError, InvalidParameterError
from .measures import moment
from .priors import PriorSpec

GRID_SIZE_DEFAULT = 257
POLISH_TOL = 1e-10
POLISH_CAP = 500
POLISH_DAMPING = 0.5
DEGENERATE_TOL = 1e-9
R_ASYMPTOTIC = 1e-3  # below this the small-r closed forms take over


@dataclass(frozen=True)
class RSState:
    """Order-parameter pair: overlap q and effective denoising SNR r."""

    q: float
    r: float

    def __post_init__(self):
        if self.q < 0 or self.r < 0:
            raise InvalidParameterError("RSState needs q >= 0 and r >= 0")


@dataclass(frozen=True)
class SolveResult:
    q_star: float
    r_star: float
    f_limit: float
    mutual_info: float
    mmse_tensor: float
    mmse_psd: float | None
    branches: tuple
    converged: bool
    degenerate: bool


@dataclass(frozen=True)
class SweepEntry:
    alpha: float
    result: SolveResult | None
    error: str | None


# ---------------------------------------------------------------------------
# mode adapters


class _Potentials:
    """Uniform access to the symmetric / rectangular potential pair."""

    def __init__(self, prior: PriorSpec, ch: ChannelSpec, quad: QuadratureSpec, mode: str):
        self.prior = prior
        self.ch = ch
        self.quad = quad
        self.mode = mode
        self.rho = prior.rho
        mu = prior.limiting_measure
        if mode == "symmetric":
            m1 = moment(mu, 1)
            self.k = 4.0
            self.psi_zero = -0.25
            self.dpsi_zero = -(self.rho - m1 * m1) / 4.0
            self._psi = lambda r: _fc.psi_p0(mu, r)
            self._dpsi = lambda r: _fc.psi_p0_prime(mu, r)
            self._Psi = lambda q: _ch.psi_out(ch, q, self.rho, quad)
            self._dPsi = lambda q: _ch.psi_out_prime(ch, q, self.rho, quad)
        elif mode == "rectangular":
            beta = prior.beta
            if beta is None:
                raise InvalidParameterError("rectangular solve needs a prior with beta")
            self.k = 2.0
            self.psi_zero = 0.0
            self.dpsi_zero = -self.rho / 2.0
            self._psi = lambda r: _fc.psi_rec(mu, r, beta)
            self._dpsi = lambda r: _fc.psi_rec_prime(mu, r, beta)
            self._Psi = lambda q: _ch.psi_out_rec(ch, q, self.rho, quad)
            self._dPsi = lambda q: _ch.psi_out_rec_prime(ch, q, self.rho, quad)
        else:
            raise InvalidParameterError(f"unknown mode {mode!r}")

    # exact callables -------------------------------------------------------

    def psi(self, r: float) -> float:
        if r < R_ASYMPTOTIC:
            return self.psi_zero + self.dpsi_zero * r
        return self._psi(r)

    def dpsi(self, r: float) -> float:
        if r <= 0:
            return self.dpsi_zero
        return self._dpsi(r)

    def Psi(self, q: float) -> float:
        return self._Psi(min(max(q, 0.0), self.rho))

    def dPsi(self, q: float) -> float:
        return self._dPsi(min(max(q, 0.0), self.rho))

    def couple(self, q: float, r: float) -> float:
        base = r * (self.rho - q) / self.k
        return base + 0.25 if self.mode == "symmetric" else base

    def f(self, q: float, r: float, alpha: float) -> float:
        return self.psi(r) + alpha * self.Psi(q) + self.couple(q, r)

    def inner_target(self, q: float) -> float:
        # stationarity of f in r: psi'(r) = -(rho - q)/k
        return -(self.rho - q) / self.k

    def table_key(self):
        fp = _fc._fingerprint(self.prior.limiting_measure)
        beta = self.prior.beta if self.mode == "rectangular" else None
        return (fp, self.mode, beta)


# ---------------------------------------------------------------------------
# denoising-potential table

_TABLES: dict = {}
_TABLE_LOCK = threading.Lock()
_NODES_PER_DECADE = 5


class _PsiTable:
    """Monotone interpolant of (psi, psi') on a log-spaced r grid."""

    def __init__(self, pot: _Potentials):
        self.pot = pot
        self.r_nodes = np.array([])
        self.psi_vals = np.array([])
        self.dpsi_vals = np.array([])
        self._psi_interp = None
        self._dpsi_interp = None

    def ensure(self, r_hi: float):
        r_hi = max(r_hi, 10.0 * R_ASYMPTOTIC)
        have_hi = self.r_nodes[-1] if self.r_nodes.size else 0.0
        if have_hi >= r_hi:
            return
        lo = R_ASYMPTOTIC if not self.r_nodes.size else have_hi
        decades = np.log10(r_hi / lo)
        count = max(2, int(np.ceil(decades * _NODES_PER_DECADE)) + 1)
        new = np.geomspace(lo, r_hi, count)
        if self.r_nodes.size:
            new = new[new > have_hi * (1 + 1e-12)]
        if new.size == 0:
            return
        psi_new = np.array([self.pot.psi(r) for r in new])
        dpsi_new = np.array([self.pot.dpsi(r) for r in new])
        self.r_nodes = np.concatenate([self.r_nodes, new])
        self.psi_vals = np.concatenate([self.psi_vals, psi_new])
        self.dpsi_vals = np.concatenate([self.dpsi_vals, dpsi_new])
        logs = np.log(self.r_nodes)
        self._psi_interp = PchipInterpolator(logs, self.psi_vals)
        self._dpsi_interp = PchipInterpolator(logs, self.dpsi_vals)

    def psi(self, r: float) -> float:
        if r < R_ASYMPTOTIC:
            return self.pot.psi_zero + self.pot.dpsi_zero * r
        r = min(r, self.r_nodes[-1])
        return float(self._psi_interp(np.log(r)))

    def dpsi(self, r: float) -> float:
        if r < R_ASYMPTOTIC:
            return self.pot.dpsi_zero
        r = min(r, self.r_nodes[-1])
        return float(self._dpsi_interp(np.log(r)))

    def inner_argmin(self, q: float, r_max: float) -> float:
        """Root of psi'(r) = -(rho - q)/k on [0, r_max], boundary-clamped."""
        tau = self.pot.inner_target(q)
        if tau <= self.pot.dpsi_zero:
            return 0.0
        if r_max <= 0:
            return 0.0
        if self.dpsi(r_max) < tau:
            return r_max
        lo, hi = 0.0, r_max
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.dpsi(mid) < tau:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def _get_table(pot: _Potentials) -> _PsiTable:
    key = pot.table_key()
    with _TABLE_LOCK:
        table = _TABLES.get(key)
        if table is None:
            table = _PsiTable(pot)
            _TABLES[key] = table
        return table


def clear_caches() -> None:
    with _TABLE_LOCK:
        _TABLES.clear()


# ---------------------------------------------------------------------------
# potential evaluation API


def _mode_for(prior: PriorSpec) -> str:
    return "rectangular" if prior.rectangular else "symmetric"


def f_rs(prior: PriorSpec, ch: ChannelSpec, alpha: float, state: RSState,
         quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Replica-symmetric potential at (q, r); r = 0 means the r -> 0+ limit."""
    pot = _Potentials(prior, ch, quad, "symmetric")
    _check_state(pot, state)
    return pot.f(state.q, state.r, alpha)


def f_rec_rs(prior: PriorSpec, ch: ChannelSpec, alpha: float, state: RSState,
             quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Rectangular replica-symmetric potential at (q, r)."""
    pot = _Potentials(prior, ch, quad, "rectangular")
    _check_state(pot, state)
    return pot.f(state.q, state.r, alpha)


def _check_state(pot, state):
    if state.q > pot.rho * (1 + 1e-12):
        raise DomainError(f"q = {state.q} exceeds rho = {pot.rho}")


def inf_r(prior: PriorSpec, ch: ChannelSpec, alpha: float, q: float,
          quad: QuadratureSpec = DEFAULT_QUADRATURE) -> tuple[float, float]:
    """Inner minimizer of the potential in r at fixed q, and its value.

    Bisection on the monotone stationarity condition over [0, r_max] with
    r_max = k alpha Psi'(rho); boundary values are returned when the
    condition has no interior root.
    """
    if alpha <= 0:
        raise InvalidParameterError("alpha must be positive")
    pot = _Potentials(prior, ch, quad, _mode_for(prior))
    if q < -1e-12 or q > pot.rho * (1 + 1e-12):
        raise DomainError(f"q = {q} outside [0, {pot.rho}]")
    q = min(max(q, 0.0), pot.rho)
    r_max = pot.k * alpha * pot.dPsi(pot.rho)
    r_star = _inner_argmin_exact(pot, q, r_max)
    return r_star, pot.f(q, r_star, alpha)


def _inner_argmin_exact(pot: _Potentials, q: float, r_max: float) -> float:
    """Inner argmin against the exact psi', seeded by the table."""
    tau = pot.inner_target(q)
    if tau <= pot.dpsi_zero or r_max <= 0:
        return 0.0
    if r_max < R_ASYMPTOTIC:
        # the entire bracket sits in the small-r regime where psi' is flat
        return 0.0 if tau <= pot.dpsi_zero else r_max
    table = _get_table(pot)
    table.ensure(r_max)
    if pot.dpsi(r_max) < tau:
        return r_max
    r0 = table.inner_argmin(q, r_max)
    r0 = min(max(r0, R_ASYMPTOTIC), r_max)
    # secant polish on the exact derivative
    r1 = min(r0 * 1.02 + 1e-6, r_max)
    f0 = pot.dpsi(r0) - tau
    f1 = pot.dpsi(r1) - tau
    for _ in range(60):
        if abs(f1) < 1e-11 * max(1.0, abs(tau)):
            break
        if f1 == f0:
            break
        r2 = r1 - f1 * (r1 - r0) / (f1 - f0)
        if not np.isfinite(r2) or r2 <= 0 or r2 > r_max:
            r2 = 0.5 * (r0 + r1)
        r0, f0 = r1, f1
        r1 = r2
        f1 = pot.dpsi(r1) - tau
    return float(min(max(r1, 0.0), r_max))


# ---------------------------------------------------------------------------
# solve


def solve(prior: PriorSpec, ch: ChannelSpec, alpha: float,
          grid_size: int = GRID_SIZE_DEFAULT,
          quad: QuadratureSpec = DEFAULT_QUADRATURE) -> SolveResult:
    """Sup-inf extremization for the symmetric model."""
    if prior.rectangular:
        raise InvalidParameterError("use solve_rec for rectangular priors")
    return _solve_generic(_Potentials(prior, ch, quad, "symmetric"), alpha, grid_size)


def solve_rec(prior: PriorSpec, ch: ChannelSpec, alpha: float,
              beta: float | None = None, grid_size: int = GRID_SIZE_DEFAULT,
              quad: QuadratureSpec = DEFAULT_QUADRATURE) -> SolveResult:
    """Sup-inf extremization for the rectangular model."""
    if not prior.rectangular:
        raise InvalidParameterError("solve_rec needs a rectangular prior")
    if beta is not None and abs(beta - prior.beta) > 1e-12:
        raise InvalidParameterError(
            f"beta = {beta} conflicts with the prior's beta = {prior.beta}")
    return _solve_generic(_Potentials(prior, ch, quad, "rectangular"), alpha, grid_size)


def _solve_generic(pot: _Potentials, alpha: float, grid_size: int) -> SolveResult:
    if alpha <= 0:
        raise InvalidParameterError("alpha must be positive")
    if grid_size < 16:
        raise InvalidParameterError("grid_size must be at least 16")
    rho = pot.rho
    r_max = pot.k * alpha * pot.dPsi(rho)

    table = None
    if r_max >= R_ASYMPTOTIC:
        table = _get_table(pot)
        table.ensure(r_max)

    def scan_value(q):
        if table is None:
            r_in = 0.0 if pot.inner_target(q) <= pot.dpsi_zero else r_max
            psi_val = pot.psi_zero + pot.dpsi_zero * r_in
        else:
            r_in = table.inner_argmin(q, r_max)
            psi_val = table.psi(r_in)
        return psi_val + alpha * pot.Psi(q) + pot.couple(q, r_in)

    qs = np.linspace(0.0, rho, grid_size)
    vals = np.array([scan_value(q) for q in qs])

    # local maximizers of the scan, golden-refined
    branches = []
    for i in range(grid_size):
        left = vals[i - 1] if i > 0 else -np.inf
        right = vals[i + 1] if i < grid_size - 1 else -np.inf
        if vals[i] >= left and vals[i] >= right:
            lo = qs[max(i - 1, 0)]
            hi = qs[min(i + 1, grid_size - 1)]
            q_ref, v_ref = _golden_max(scan_value, lo, hi)
            branches.append((q_ref, v_ref))
    merge_radius = 1.5 * rho / (grid_size - 1)
    branches = _dedupe_branches(branches, merge_radius)
    branches.sort(key=lambda b: (-b[1], b[0]))

    degenerate = len(branches) >= 2 and abs(branches[0][1] - branches[1][1]) < DEGENERATE_TOL
    if degenerate:
        top = min(branches[0], branches[1], key=lambda b: b[0])
    else:
        top = branches[0]

    q_star, converged = _polish(pot, alpha, top[0], table=table)
    r_star = _inner_argmin_exact(pot, q_star, r_max)
    f_limit = pot.f(q_star, r_star, alpha)
    if not converged or abs(q_star - top[0]) > merge_radius:
        # the polish left the scan basin: keep whichever point the exact
        # potential actually prefers (the scan value itself is table-biased)
        r_top = _inner_argmin_exact(pot, top[0], r_max)
        f_top = pot.f(top[0], r_top, alpha)
        if f_top > f_limit:
            q_star, r_star, f_limit = top[0], r_top, f_top

    mutual_info = -f_limit + alpha * pot.Psi(rho)
    mmse_tensor = max(rho * rho - q_star * q_star, 0.0)
    mmse_psd = max(rho - q_star, 0.0) if pot.prior.psd else None

    branch_list = tuple(sorted(set(
        [(float(q_star), float(f_limit))] +
        [(float(q), float(v)) for q, v in branches if abs(q - q_star) > merge_radius]
    ), key=lambda b: b[0]))
    return SolveResult(float(q_star), float(r_star), float(f_limit),
                       float(mutual_info), float(mmse_tensor),
                       None if mmse_psd is None else float(mmse_psd),
                       branch_list, bool(converged), bool(degenerate))


_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_max(fn, lo, hi, tol=1e-10):
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
    q = 0.5 * (a + b)
    return q, fn(q)


def _dedupe_branches(branches, merge_radius):
    out = []
    for q, v in sorted(branches):
        if out and abs(q - out[-1][0]) < merge_radius:
            if v > out[-1][1]:
                out[-1] = (q, v)
        else:
            out.append((q, v))
    return out


def _polish(pot: _Potentials, alpha: float, q0: float, table=None) -> tuple[float, bool]:
    """Damped stationarity fixed point q <- rho + k psi'(k alpha Psi'(q)).

    Runs first against the cheap table (when present), then against the exact
    potential callables until the stationarity residual is driven below the
    reporting tolerance; the table stage costs nothing and leaves only a few
    exact iterations."""
    rho = pot.rho
    q = min(max(q0, 0.0), rho)
    budget = POLISH_CAP
    if table is not None:
        dpsi = lambda r: table.dpsi(r)
        for _ in range(POLISH_CAP):
            budget -= 1
            r = pot.k * alpha * pot.dPsi(q)
            target = rho + pot.k * dpsi(r)
            q_new = min(max((1.0 - POLISH_DAMPING) * q + POLISH_DAMPING * target, 0.0), rho)
            if abs(q_new - q) <= POLISH_TOL * max(1.0, rho):
                q = q_new
                break
            q = q_new
    converged = False
    for _ in range(max(budget, 8)):
        r = pot.k * alpha * pot.dPsi(q)
        target = rho + pot.k * pot.dpsi(r)
        resid = abs(target - q)
        boundary = (q <= 0.0 and target < 0.0) or (q >= rho and target > rho)
        if boundary or resid <= 1e-8 * pot.k * max(1.0, rho):
            return float(q), True
        q_new = min(max((1.0 - POLISH_DAMPING) * q + POLISH_DAMPING * target, 0.0), rho)
        if abs(q_new - q) <= POLISH_TOL * max(1.0, rho):
            return float(q_new), True
        q = q_new
    return float(q), converged


# ---------------------------------------------------------------------------
# spiked tensor model


def f_rs_spike(prior: PriorSpec, q: float, lam: float, p: int,
               quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Potential of the tensor side-information model at overlap q."""
    _check_spike_args(lam, p)
    rho = prior.rho
    if q < -1e-12 or q > rho * (1 + 1e-12):
        raise DomainError(f"q = {q} outside [0, {rho}]")
    q = min(max(q, 0.0), rho)
    mu = prior.limiting_measure
    r = 2.0 * p * lam * q ** (p - 1)
    if r < R_ASYMPTOTIC:
        m1 = moment(mu, 1)
        psi_val = -0.25 - (rho - m1 * m1) / 4.0 * r
    else:
        psi_val = _fc.psi_p0(mu, r)
    return (-0.5 * lam * (p - 1) * q ** p + psi_val + 0.25
            + 0.5 * p * lam * rho * q ** (p - 1))


def _check_spike_args(lam, p):
    if lam < 0:
        raise InvalidParameterError("lambda must be nonnegative")
    if int(p) != p or p < 2:
        raise InvalidParameterError("tensor order p must be an integer >= 2")


def solve_spike(prior: PriorSpec, lam: float, p: int,
                grid_size: int = GRID_SIZE_DEFAULT) -> tuple[float, float]:
    """Extremize the spiked-tensor potential over q in [0, rho].

    Ties (e.g. the flat potential at lambda = 0) report the leftmost q.
    """
    _check_spike_args(lam, p)
    rho = prior.rho
    mu = prior.limiting_measure
    if lam == 0:
        return 0.0, 0.0
    pot = _Potentials(prior, ChannelSpec("linear", 1.0), DEFAULT_QUADRATURE, "symmetric")
    r_top = 2.0 * p * lam * rho ** (p - 1)
    table = None
    if r_top >= R_ASYMPTOTIC:
        table = _get_table(pot)
        table.ensure(r_top)

    def scan_value(q):
        r = 2.0 * p * lam * q ** (p - 1)
        psi_val = (pot.psi_zero + pot.dpsi_zero * r) if (table is None or r < R_ASYMPTOTIC) \
            else table.psi(r)
        return (-0.5 * lam * (p - 1) * q ** p + psi_val + 0.25
                + 0.5 * p * lam * rho * q ** (p - 1))

    qs = np.linspace(0.0, rho, grid_size)
    vals = np.array([scan_value(q) for q in qs])
    if vals.max() - vals.min() < 1e-12:
        return 0.0, float(f_rs_spike(prior, 0.0, lam, p))
    i = int(np.argmax(vals))
    lo = qs[max(i - 1, 0)]
    hi = qs[min(i + 1, grid_size - 1)]
    q_ref, _ = _golden_max(scan_value, lo, hi)

    # polish with the exact potential through the shared stationarity map
    q = q_ref
    converged = False
    for _ in range(POLISH_CAP):
        r = 2.0 * p * lam * q ** (p - 1)
        target = rho + 4.0 * (pot.dpsi(r) if r > 0 else pot.dpsi_zero)
        q_new = min(max((1.0 - POLISH_DAMPING) * q + POLISH_DAMPING * target, 0.0), rho)
        if abs(q_new - q) <= POLISH_TOL * max(1.0, rho):
            q = q_new
            converged = True
            break
        q = q_new
    if not converged or abs(q - q_ref) > max(0.05 * rho, 2 * (qs[1] - qs[0])):
        q = q_ref
    return float(q), float(f_rs_spike(prior, q, lam, p))


# ---------------------------------------------------------------------------
# sweep


def sweep(prior: PriorSpec, ch: ChannelSpec, alphas, mode: str | None = None,
          grid_size: int = GRID_SIZE_DEFAULT,
          quad: QuadratureSpec = DEFAULT_QUADRATURE,
          threads: int = 1) -> list[SweepEntry]:
    """Independent solves across an ascending list of sample ratios.

    Denoising-potential tables and channel-potential values are shared across
    the sweep through the module caches; failures are collected per alpha.
    """
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas):
        raise InvalidParameterError("alphas must be positive")
    if sorted(alphas) != alphas:
        raise InvalidParameterError("alphas must be ascending")
    if mode is None:
        mode = _mode_for(prior)
    solver = solve_rec if mode == "rectangular" else solve

    def run(a):
        try:
            return SweepEntry(a, solver(prior, ch, a, grid_size=grid_size, quad=quad), None)
        except Exception as exc:  # collected, not fatal to the sweep
            return SweepEntry(a, None, f"{type(exc).__name__}: {exc}")

    if threads > 1 and len(alphas) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, alphas))
    return [run(a) for a in alphas]