"""Command-line interface: configuration ingestion, subcommand dispatch, and
machine-readable emission of curves and verification reports.

Config files are flat `key = value` text with dotted section names; full-line
comments start with '#'.  Exit codes: 0 success, 1 failed verification or
internal error, 2 configuration/usage error, 3 partial per-row failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import montecarlo as mc
from .apps import NNProblem, effective_nn_noise
from .channels import ChannelSpec, QuadratureSpec, psi_out, psi_out_rec
from .errors import SensingLimitsError
from .freeconv import psi_p0, psi_rec
from .measures import load_measure
from .priors import build_prior
from .solver import GRID_SIZE_DEFAULT, solve_spike, sweep

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

CURVE_HEADER = "alpha,q_star,r_star,f_limit,mutual_info,mmse_tensor,mmse_psd,degenerate,converged"

_KNOWN_KEYS = {
    "model", "seed", "threads", "experiments",
    "prior.kind", "prior.kappa", "prior.beta", "prior.rank_ratio", "prior.path",
    "prior.rho", "prior.psd", "prior.d", "prior.reps", "prior.seed",
    "channel.activation", "channel.delta", "channel.randomness",
    "alpha_grid", "alpha.start", "alpha.stop", "alpha.count", "alpha.log",
    "quadrature.hermite_order", "quadrature.inner_order",
    "solver.grid_size",
    "spike.p",
    "nn.kappa", "nn.delta", "nn.delta0",
    "output.format", "output.path",
    "potentials.kind", "r.start", "r.stop", "r.count", "q.count",
    "montecarlo.d", "montecarlo.reps", "montecarlo.t", "montecarlo.r",
    "montecarlo.ensemble", "montecarlo.n_samples",
}


class ConfigError(SensingLimitsError):
    def __init__(self, message, line=None):
        prefix = f"config line {line}: " if line else "config: "
        super().__init__(prefix + message)
        self.line = line


@dataclass
class RunConfig:
    """Parsed key-value configuration with per-key line numbers."""

    values: dict
    lines: dict

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing required key {key!r}")
        return self.values[key]

    def line_of(self, key):
        return self.lines.get(key)

    def as_float(self, key, default=None):
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {raw!r}", self.line_of(key))

    def as_int(self, key, default=None):
        val = self.as_float(key, default)
        if val != int(val):
            raise ConfigError(f"{key} must be an integer", self.line_of(key))
        return int(val)

    def as_bool(self, key, default=False):
        raw = self.values.get(key)
        if raw is None:
            return default
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key} must be true or false, got {raw!r}", self.line_of(key))

    def as_floats(self, key):
        raw = self.require(key)
        try:
            return [float(tok) for tok in raw.split()]
        except ValueError:
            raise ConfigError(f"{key} must be a list of numbers", self.line_of(key))


def parse_config(path: str) -> RunConfig:
    values = {}
    lines = {}
    try:
        with open(path) as f:
            raw_lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    for lineno, raw in enumerate(raw_lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        values[key] = value
        lines[key] = lineno
    return RunConfig(values, lines)


# ---------------------------------------------------------------------------
# config -> domain objects


def _build_prior_from(cfg: RunConfig, seed: int):
    kind = cfg.require("prior.kind")
    line_key = {"wishart": "prior.kappa", "rect_gaussian": "prior.beta"}.get(
        kind, "prior.kind")
    line = cfg.line_of(line_key) or cfg.line_of("prior.kind")
    try:
        if kind == "goe":
            return build_prior("goe")
        if kind == "wishart":
            return build_prior("wishart", kappa=cfg.as_float("prior.kappa"))
        if kind == "rect_gaussian":
            return build_prior("rect_gaussian", beta=cfg.as_float("prior.beta"))
        if kind == "rect_product":
            kwargs = dict(beta=cfg.as_float("prior.beta"),
                          rank_ratio=cfg.as_float("prior.rank_ratio"))
            if "prior.d" in cfg.values:
                kwargs["d"] = cfg.as_int("prior.d")
            if "prior.reps" in cfg.values:
                kwargs["reps"] = cfg.as_int("prior.reps")
            kwargs["seed"] = cfg.as_int("prior.seed", seed)
            return build_prior("rect_product", **kwargs)
        if kind == "empirical":
            path = cfg.require("prior.path")
            if not os.path.exists(path):
                raise ConfigError(f"measure file {path!r} does not exist",
                                  cfg.line_of("prior.path"))
            measure = load_measure(path)
            beta = cfg.as_float("prior.beta") if "prior.beta" in cfg.values else None
            return build_prior("empirical", measure=measure,
                               rho=cfg.as_float("prior.rho"),
                               psd=cfg.as_bool("prior.psd"), beta=beta)
    except SensingLimitsError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), line)
    raise ConfigError(f"unknown prior kind {kind!r}", line)


def _build_channel_from(cfg: RunConfig) -> ChannelSpec:
    activation = cfg.get("channel.activation", "linear")
    delta = cfg.as_float("channel.delta", 1.0)
    randomness = cfg.get("channel.randomness", "none")
    try:
        return ChannelSpec(activation, delta, randomness)
    except SensingLimitsError as exc:
        raise ConfigError(str(exc), cfg.line_of("channel.activation"))


def _build_quadrature_from(cfg: RunConfig) -> QuadratureSpec:
    try:
        return QuadratureSpec(cfg.as_int("quadrature.hermite_order", 61),
                              cfg.as_int("quadrature.inner_order", 121))
    except SensingLimitsError as exc:
        raise ConfigError(str(exc), cfg.line_of("quadrature.hermite_order"))


def _alpha_grid_from(cfg: RunConfig):
    if "alpha_grid" in cfg.values:
        return cfg.as_floats("alpha_grid")
    if "alpha.start" in cfg.values:
        start = cfg.as_float("alpha.start")
        stop = cfg.as_float("alpha.stop")
        count = cfg.as_int("alpha.count")
        if count < 1:
            raise ConfigError("alpha.count must be >= 1", cfg.line_of("alpha.count"))
        if cfg.as_bool("alpha.log", True):
            return list(np.geomspace(start, stop, count))
        return list(np.linspace(start, stop, count))
    raise ConfigError("no alpha grid: provide alpha_grid or alpha.start/stop/count")


# ---------------------------------------------------------------------------
# number formatting (17 significant digits, '.' decimal, no locale)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _write_text(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n") as f:
            f.write(text)


# ---------------------------------------------------------------------------
# subcommands


def run_curve(cfg: RunConfig, out_path=None, seed=None, threads=1) -> int:
    model = cfg.get("model", "symmetric")
    if model not in ("symmetric", "rectangular", "nn", "bsr"):
        raise ConfigError(f"model {model!r} is not a curve model", cfg.line_of("model"))
    seed = cfg.as_int("seed", 0) if seed is None else seed
    quad = _build_quadrature_from(cfg)
    grid_size = cfg.as_int("solver.grid_size", GRID_SIZE_DEFAULT)
    alphas = _alpha_grid_from(cfg)
    if sorted(alphas) != alphas:
        raise ConfigError("alpha grid must be ascending")

    gen_scale = None
    if model == "nn":
        kappa = cfg.as_float("nn.kappa")
        delta = cfg.as_float("nn.delta", 0.0)
        delta0 = cfg.as_float("nn.delta0")
        NNProblem(kappa, delta, delta0, alphas[0])  # validates the block
        try:
            prior = build_prior("wishart", kappa=kappa)
        except SensingLimitsError as exc:
            raise ConfigError(str(exc), cfg.line_of("nn.kappa"))
        ch = ChannelSpec("linear", effective_nn_noise(kappa, delta, delta0))
        mode = "symmetric"
        gen_scale = kappa  # the emitted mmse_tensor is kappa (rho - q*)
    else:
        prior = _build_prior_from(cfg, seed)
        ch = _build_channel_from(cfg)
        mode = "rectangular" if (model in ("rectangular", "bsr")) else "symmetric"
        if mode == "rectangular" and not prior.rectangular:
            raise ConfigError("rectangular model needs a rectangular prior",
                              cfg.line_of("prior.kind"))
        if mode == "symmetric" and prior.rectangular:
            raise ConfigError("symmetric model needs a symmetric prior",
                              cfg.line_of("prior.kind"))

    entries = sweep(prior, ch, alphas, mode=mode, grid_size=grid_size,
                    quad=quad, threads=threads)
    rows = [CURVE_HEADER]
    partial = False
    for entry in entries:
        if entry.result is None:
            rows.append(f"{_fmt(entry.alpha)},ERROR:{entry.error}")
            partial = True
            continue
        res = entry.result
        if gen_scale is None:
            mmse_main = res.mmse_tensor
        else:
            mmse_main = gen_scale * (prior.rho - res.q_star)
        numbers = [res.q_star, res.r_star, res.f_limit, res.mutual_info, mmse_main]
        if not all(np.isfinite(v) for v in numbers):
            rows.append(f"{_fmt(entry.alpha)},ERROR:non-finite solver output")
            partial = True
            continue
        rows.append(",".join([
            _fmt(entry.alpha), _fmt(res.q_star), _fmt(res.r_star),
            _fmt(res.f_limit), _fmt(res.mutual_info), _fmt(mmse_main),
            _fmt(res.mmse_psd), _fmt(res.degenerate), _fmt(res.converged),
        ]))
    _emit_table(cfg, out_path, rows)
    return EXIT_PARTIAL if partial else EXIT_OK


def _emit_table(cfg, out_path, rows):
    fmt = cfg.get("output.format", "csv")
    path = out_path or cfg.get("output.path")
    if fmt == "csv":
        _write_text(path, "\n".join(rows) + "\n")
    elif fmt == "json":
        header = rows[0].split(",")
        data = []
        for row in rows[1:]:
            cells = row.split(",", len(header) - 1)
            data.append(dict(zip(header, cells)))
        _write_text(path, json.dumps({"rows": data}, sort_keys=True, indent=1) + "\n")
    else:
        raise ConfigError(f"unknown output format {fmt!r}", cfg.line_of("output.format"))


_EXPERIMENTS = ("free_convolution", "rect_convolution", "goe_denoising",
                "clt_universality")


def run_verify(cfg: RunConfig, out_path=None, seed=None, threads=1) -> int:
    names = cfg.require("experiments").split()
    for name in names:
        if name not in _EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}; known: {_EXPERIMENTS}",
                              cfg.line_of("experiments"))
    seed = cfg.as_int("seed", 0) if seed is None else seed
    suite = []
    for name in names:
        if name == "free_convolution":
            prior = _build_prior_from(cfg, seed)
            d = cfg.as_int("montecarlo.d", 2000)
            reps = cfg.as_int("montecarlo.reps", 5)
            ts = [float(t) for t in cfg.get("montecarlo.t", "0.5 1 2").split()]
            for t in ts:
                suite.append(mc.check_free_convolution(prior, t, d=d, reps=reps, seed=seed))
        elif name == "rect_convolution":
            prior = _build_prior_from(cfg, seed)
            d = cfg.as_int("montecarlo.d", 1000)
            reps = cfg.as_int("montecarlo.reps", 5)
            ts = [float(t) for t in cfg.get("montecarlo.t", "0.5 1 2").split()]
            for t in ts:
                suite.append(mc.check_rect_convolution(prior, t, d=d, reps=reps, seed=seed))
        elif name == "goe_denoising":
            d = cfg.as_int("montecarlo.d", 1000)
            reps = cfg.as_int("montecarlo.reps", 10)
            rs = [float(r) for r in cfg.get("montecarlo.r", "0 1 9").split()]
            for r in rs:
                suite.append(mc.check_goe_denoising(r, d=d, reps=reps, seed=seed))
        elif name == "clt_universality":
            prior = _build_prior_from(cfg, seed)
            d = cfg.as_int("montecarlo.d", 200)
            n = cfg.as_int("montecarlo.n_samples", 2000)
            ensemble = cfg.get("montecarlo.ensemble", "rank_one_centered")
            suite.append(mc.check_clt_universality(ensemble, prior, d=d,
                                                   n_samples=n, seed=seed))
    all_passed = all(rep.passed for rep in suite)
    doc = {"suite": [rep.to_dict() for rep in suite], "all_passed": all_passed}
    path = out_path or cfg.get("output.path")
    _write_text(path, json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return EXIT_OK if all_passed else EXIT_FAIL


def run_potentials(cfg: RunConfig, out_path=None, seed=None, threads=1) -> int:
    kind = cfg.get("potentials.kind", "psi_p0")
    seed = cfg.as_int("seed", 0) if seed is None else seed
    quad = _build_quadrature_from(cfg)
    rows = []
    if kind in ("psi_p0", "psi_rec"):
        prior = _build_prior_from(cfg, seed)
        mu = prior.limiting_measure
        count = cfg.as_int("r.count", 0)
        if count:
            start = cfg.as_float("r.start")
            stop = cfg.as_float("r.stop")
            rs = np.geomspace(start, stop, count)
        else:
            rs = np.array([])
        rows.append(f"r,{kind}")
        for r in rs:
            if kind == "psi_p0":
                val = psi_p0(mu, float(r))
            else:
                val = psi_rec(mu, float(r), prior.beta)
            rows.append(f"{_fmt(float(r))},{_fmt(val)}")
    elif kind in ("psi_out", "psi_out_rec"):
        prior = _build_prior_from(cfg, seed)
        ch = _build_channel_from(cfg)
        count = cfg.as_int("q.count", 0)
        qs = np.linspace(0.0, prior.rho, count) if count else np.array([])
        rows.append(f"q,{kind}")
        fn = psi_out if kind == "psi_out" else psi_out_rec
        for q in qs:
            rows.append(f"{_fmt(float(q))},{_fmt(fn(ch, float(q), prior.rho, quad))}")
    else:
        raise ConfigError(f"unknown potentials kind {kind!r}",
                          cfg.line_of("potentials.kind"))
    _emit_table(cfg, out_path, rows)
    return EXIT_OK


def run_spike(cfg: RunConfig, out_path=None, seed=None, threads=1) -> int:
    seed = cfg.as_int("seed", 0) if seed is None else seed
    prior = _build_prior_from(cfg, seed)
    p = cfg.as_int("spike.p", 2)
    lams = _alpha_grid_from(cfg)  # the grid doubles as the lambda list
    rows = ["lambda,q_star,f_limit"]
    for lam in lams:
        q_star, f_limit = solve_spike(prior, lam, p,
                                      grid_size=cfg.as_int("solver.grid_size",
                                                           GRID_SIZE_DEFAULT))
        rows.append(f"{_fmt(lam)},{_fmt(q_star)},{_fmt(f_limit)}")
    _emit_table(cfg, out_path, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {
    "curve": run_curve,
    "verify": run_verify,
    "potentials": run_potentials,
    "spike": run_spike,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sensing-limits",
        description="Asymptotic Bayes-optimal limits of matrix sensing")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        env = os.environ.get("SENSING_LIMITS_THREADS")
        threads = int(env) if env else 1

    try:
        cfg = parse_config(args.config)
        return _COMMANDS[args.command](cfg, out_path=args.out,
                                       seed=args.seed, threads=threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SensingLimitsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())