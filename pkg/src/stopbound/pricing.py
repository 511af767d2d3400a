"""Sharp-boundary Monte Carlo valuation of a stopping boundary."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import instruments as ins
from . import netcore
from .models import BLOCK, PRICE, PathBatch, simulate_batch
from .presets import Problem

# float64 budget for one chunk of simulated normals
_CHUNK_FLOATS = 8_000_000


class NetBoundary:
    """Callable boundary ``(t, xi) -> levels`` backed by a trained network."""

    def __init__(self, net_config: netcore.NetConfig, theta: np.ndarray):
        self.net_config = net_config
        self.theta = theta

    def __call__(self, t: float, xi: np.ndarray) -> np.ndarray:
        cfg = self.net_config
        if cfg.latent_dim == 0:
            level = netcore.forward(cfg, self.theta, np.array([t]))
            return np.broadcast_to(level, (xi.shape[0], cfg.output_dim))
        return netcore.forward(cfg, self.theta, np.full(xi.shape[0], t), xi)


class ConstantBoundary:
    def __init__(self, levels):
        self.levels = np.atleast_1d(np.asarray(levels, dtype=float))

    def __call__(self, t: float, xi: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.levels, (xi.shape[0], self.levels.size))


class CurveBoundary:
    """Time-only boundary interpolated from ``(times, levels)``, e.g. a PDE curve."""

    def __init__(self, times, levels):
        self.times = np.asarray(times, dtype=float)
        self.levels = np.asarray(levels, dtype=float).reshape(self.times.size, -1)

    def __call__(self, t: float, xi: np.ndarray) -> np.ndarray:
        row = np.array([np.interp(t, self.times, self.levels[:, j])
                        for j in range(self.levels.shape[1])])
        return np.broadcast_to(row, (xi.shape[0], row.size))


@dataclass
class PriceReport:
    price: float
    stderr: float
    n_paths: int
    seed: int
    histogram: list[int]
    european: float | None = None
    european_stderr: float | None = None
    upper_bound: float | None = None
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def stop_indices(instr: ins.Instrument, boundary, batch: PathBatch) -> np.ndarray:
    """First exercise-date index with the state in the stopping region (n if none)."""
    n_paths, n_dates = batch.weights.shape
    n = n_dates - 1
    tau = np.full(n_paths, n)
    alive = np.arange(n_paths)
    for k in range(n):
        if alive.size == 0:
            break
        s = batch.s[alive, k]
        y = None if batch.y is None else batch.y[alive, k]
        z = None if batch.z is None else batch.z[alive, k]
        a, xi = ins.coords(instr, s, y, z)
        f = boundary(float(batch.times[k]), xi.reshape(alive.size, -1))
        stop = ins.in_stop_region(instr, ins.signed_distance(instr, f, a))
        tau[alive[stop]] = k
        alive = alive[~stop]
    return tau


def sharp_stop_time(instr: ins.Instrument, boundary, times, s, y=None, z=None) -> float:
    """Exercise time of one path; ``s`` has shape ``(n+1, d)``."""
    times = np.asarray(times, dtype=float)
    s = np.asarray(s, dtype=float).reshape(times.size, -1)
    batch = PathBatch(times, s[None], np.ones((1, times.size)),
                      None if y is None else np.asarray(y, float)[None],
                      None if z is None else np.asarray(z, float)[None])
    return float(times[stop_indices(instr, boundary, batch)[0]])


def _chunk_size(problem: Problem) -> int:
    steps = problem.grid.n * problem.grid.substeps
    n_brown = problem.model.n_assets + (1 if problem.model.has_variance else 0)
    per = steps * n_brown + (problem.grid.n + 1) * (problem.model.n_assets + 3)
    blocks = max(1, _CHUNK_FLOATS // (per * BLOCK))
    return blocks * BLOCK


def _pairwise_sum(x: np.ndarray) -> float:
    return float(np.add.reduce(x, dtype=np.float64))


def price_mc(problem: Problem, boundary, n_paths: int = 2 ** 22, seed: int = 0,
             lam=None, chunk: int | None = None, purpose: int = PRICE) -> PriceReport:
    """Sharp-boundary price ``E[phi(tau, X_tau)]`` with the European value on the same paths.

    Pricing runs under Q unless ``lam`` is given; the likelihood ratio is
    applied either way.
    """
    if n_paths < 1:
        raise ValueError("need at least one pricing path")
    instr, model, grid = problem.instrument, problem.model, problem.grid
    lam = np.zeros(model.brownian_dim) if lam is None else np.atleast_1d(np.asarray(lam, float))
    chunk = chunk or _chunk_size(problem)
    if chunk % BLOCK:
        raise ValueError(f"chunk must be a multiple of {BLOCK}")
    n = grid.n
    start = time.perf_counter()
    sums = np.zeros(4)           # price, price^2, european, european^2
    hist = np.zeros(n + 1, dtype=np.int64)
    first = 0
    while first < n_paths:
        m = min(chunk, n_paths - first)
        batch = simulate_batch(model, grid, lam, m, seed, purpose=purpose, first_path=first)
        tau = stop_indices(instr, boundary, batch)
        rows = np.arange(m)
        s_tau = batch.s[rows, tau]
        y_tau = None if batch.y is None else batch.y[rows, tau]
        z_tau = None if batch.z is None else batch.z[rows, tau]
        value = ins.payoff(instr, batch.times[tau], s_tau, y_tau, z_tau) * batch.weights[rows, tau]
        euro = ins.payoff(instr, batch.times[n], batch.s[:, n],
                          None if batch.y is None else batch.y[:, n],
                          None if batch.z is None else batch.z[:, n]) * batch.weights[:, n]
        sums += [_pairwise_sum(value), _pairwise_sum(value * value),
                 _pairwise_sum(euro), _pairwise_sum(euro * euro)]
        hist += np.bincount(tau, minlength=n + 1)
        first += m
    mean = sums[0] / n_paths
    var = max(sums[1] / n_paths - mean ** 2, 0.0) * n_paths / max(n_paths - 1, 1)
    e_mean = sums[2] / n_paths
    e_var = max(sums[3] / n_paths - e_mean ** 2, 0.0) * n_paths / max(n_paths - 1, 1)
    return PriceReport(
        price=float(mean), stderr=math.sqrt(var / n_paths), n_paths=n_paths, seed=seed,
        histogram=hist.tolist(), european=float(e_mean),
        european_stderr=math.sqrt(e_var / n_paths),
        upper_bound=float(math.exp(instr.rate * grid.maturity) * e_mean),
        wall_clock=time.perf_counter() - start)


def european_bounds(problem: Problem, n_paths: int = 2 ** 22, seed: int = 0) -> tuple[float, float, float]:
    """``(v_e, exp(rT) v_e, stderr of v_e)``; the European price is the tau = T price."""
    never = ConstantBoundary([0.0 if e < 0 else np.inf for e in problem.instrument.etas])
    rep = price_mc(problem, never, n_paths, seed)
    return rep.european, rep.upper_bound, rep.european_stderr
