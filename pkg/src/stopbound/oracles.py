"""Independent reference prices: Black-Scholes closed forms, a Crank-Nicolson
Bermudan put and Longstaff-Schwartz regression Monte Carlo."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded
from scipy.stats import norm

from . import instruments as ins
from .models import LSMC_FIT, LSMC_PRICE, BLOCK, simulate_batch
from .presets import Problem

logger = logging.getLogger(__name__)


def bs_european_closed(kind: str, s0: float, strike: float, rate: float, dividend: float,
                       sigma: float, maturity: float) -> float:
    if sigma <= 0 or maturity <= 0:
        raise ValueError("sigma and maturity must be positive")
    vol = sigma * math.sqrt(maturity)
    d1 = (math.log(s0 / strike) + (rate - dividend + 0.5 * sigma ** 2) * maturity) / vol
    d2 = d1 - vol
    df_r = math.exp(-rate * maturity)
    df_q = math.exp(-dividend * maturity)
    if kind == "call":
        return s0 * df_q * norm.cdf(d1) - strike * df_r * norm.cdf(d2)
    if kind == "put":
        return strike * df_r * norm.cdf(-d2) - s0 * df_q * norm.cdf(-d1)
    raise ValueError(f"unknown option kind {kind!r}")


# ---------------------------------------------------------------------------
# finite differences

class UnstableGridError(ValueError):
    pass


@dataclass(frozen=True)
class FDGrid:
    nodes: int = 800
    time_steps: int = 2000
    upper_multiple: float = 4.0
    lower_multiple: float = 0.125
    scheme: str = "crank-nicolson"
    rannacher_steps: int = 2

    def __post_init__(self):
        if self.nodes < 3 or self.time_steps < 1:
            raise ValueError("need >= 3 space nodes and >= 1 time step")
        if self.scheme not in ("crank-nicolson", "implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class FDResult:
    s: np.ndarray                 # price nodes
    dates: np.ndarray             # exercise dates
    values: np.ndarray            # (n_dates, nodes) option value at each exercise date
    boundary: np.ndarray          # exercise boundary at pre-maturity dates (nan: none)
    strike: float

    def value(self, s0: float, date_index: int = 0) -> float:
        return float(CubicSpline(np.log(self.s), self.values[date_index])(math.log(s0)))

    def boundary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s_star"])
            for t, b in zip(self.dates[:-1], self.boundary):
                w.writerow([repr(float(t)), repr(float(b))])


def _crossing(s, diff):
    """Largest s where ``diff = continuation - payoff`` is <= 0 on the in-the-money side."""
    idx = np.nonzero(diff <= 0.0)[0]
    if idx.size == 0:
        return np.nan
    i = idx.max()
    if i + 1 >= s.size:
        return s[i]
    x0, x1 = math.log(s[i]), math.log(s[i + 1])
    d0, d1 = diff[i], diff[i + 1]
    w = d0 / (d0 - d1) if d1 != d0 else 0.0
    return math.exp(x0 + w * (x1 - x0))


def fd_american_put(rate: float, dividend: float, sigma: float, strike: float,
                    maturity: float, exercise_dates, grid: FDGrid | None = None,
                    obstacle: bool = True) -> FDResult:
    """Bermudan put on a log-price grid; the obstacle is applied at exercise dates only."""
    grid = grid or FDGrid()
    dates = np.asarray(exercise_dates, dtype=float)
    if abs(dates[-1] - maturity) > 1e-12:
        raise ValueError("last exercise date must be the maturity")
    s_nodes = np.exp(np.linspace(math.log(grid.lower_multiple * strike),
                                 math.log(grid.upper_multiple * strike), grid.nodes))
    payoff = np.maximum(strike - s_nodes, 0.0)

    if sigma == 0.0:
        return _fd_deterministic(rate, dividend, strike, dates, s_nodes, payoff, obstacle)

    dt = maturity / grid.time_steps
    step_pos = (maturity - dates) / dt
    if np.any(np.abs(step_pos - np.round(step_pos)) > 1e-8):
        raise UnstableGridError("exercise dates must fall on time steps; "
                                f"change time_steps (now {grid.time_steps})")
    ex_steps = set(np.round(step_pos).astype(int).tolist())

    x = np.log(s_nodes)
    dx = x[1] - x[0]
    nu = rate - dividend - 0.5 * sigma ** 2
    if abs(nu) * dx / sigma ** 2 >= 1.0:
        raise UnstableGridError("cell Peclet number >= 1; refine the space grid")
    a = 0.5 * sigma ** 2 / dx ** 2 - 0.5 * nu / dx       # coefficient of V_{i-1}
    b = -sigma ** 2 / dx ** 2 - rate                     # V_i
    c = 0.5 * sigma ** 2 / dx ** 2 + 0.5 * nu / dx       # V_{i+1}

    def lower_bc(tau):
        # deep in the money: exercise at the next exercise date (or European value)
        return strike * math.exp(-rate * tau) - s_nodes[0] * math.exp(-dividend * tau)

    def banded(theta, h):
        ab = np.zeros((3, grid.nodes))
        ab[0, 2:] = -theta * h * c
        ab[1, 1:-1] = 1.0 - theta * h * b
        ab[2, :-2] = -theta * h * a
        ab[1, 0] = ab[1, -1] = 1.0
        return ab

    def step(v, theta, h, tau_new, tau_anchor):
        rhs = v.copy()
        inner = v[1:-1] + (1.0 - theta) * h * (a * v[:-2] + b * v[1:-1] + c * v[2:])
        rhs[1:-1] = inner
        rhs[0] = lower_bc(tau_new - tau_anchor)
        rhs[-1] = 0.0
        return solve_banded((1, 1), banded(theta, h), rhs)

    n_dates = dates.size
    values = np.empty((n_dates, grid.nodes))
    boundary = np.full(n_dates - 1, np.nan)
    v = payoff.copy()
    values[-1] = v
    date_idx = n_dates - 1
    since_kink = 0
    tau = 0.0
    anchor = 0.0     # time-to-maturity of the last exercise date passed
    ab_cn = banded(0.5, dt)
    for j in range(1, grid.time_steps + 1):
        tau_new = j * dt
        if grid.scheme == "implicit" or since_kink < grid.rannacher_steps:
            # two implicit half steps damp the payoff kink
            v = step(v, 1.0, 0.5 * dt, tau + 0.5 * dt, anchor)
            v = step(v, 1.0, 0.5 * dt, tau_new, anchor)
        else:
            rhs = v.copy()
            rhs[1:-1] = v[1:-1] + 0.5 * dt * (a * v[:-2] + b * v[1:-1] + c * v[2:])
            rhs[0] = lower_bc(tau_new - anchor)
            rhs[-1] = 0.0
            v = solve_banded((1, 1), ab_cn, rhs)
        since_kink += 1
        tau = tau_new
        if j in ex_steps:
            date_idx -= 1
            if obstacle:
                boundary[date_idx] = _crossing(s_nodes, np.where(payoff > 0, v - payoff, np.inf))
                v = np.maximum(v, payoff)
                since_kink = 0
                anchor = tau
            values[date_idx] = v
    return FDResult(s_nodes, dates, values, boundary, strike)


def _fd_deterministic(rate, dividend, strike, dates, s_nodes, payoff, obstacle):
    # sigma = 0: the path is s * exp((r - q) t); value is the best discounted exercise
    n_dates = dates.size
    values = np.empty((n_dates, s_nodes.size))
    boundary = np.full(n_dates - 1, np.nan)
    for k, t in enumerate(dates):
        rem = dates[k:] - t
        paths = s_nodes[None, :] * np.exp((rate - dividend) * rem)[:, None]
        disc = np.exp(-rate * rem)[:, None] * np.maximum(strike - paths, 0.0)
        values[k] = disc.max(axis=0) if obstacle else disc[-1]
        if obstacle and k < n_dates - 1:
            boundary[k] = _crossing(s_nodes, np.where(payoff > 0, values[k] - payoff - 1e-12, 1.0))
    return FDResult(s_nodes, dates, values, boundary, strike)


# ---------------------------------------------------------------------------
# Longstaff-Schwartz

@dataclass(frozen=True)
class LsmcConfig:
    n_fit_paths: int = 2 ** 18
    n_price_paths: int = 2 ** 20
    degree: int = 3
    seed: int = 0
    max_sorted: int = 5

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")


@dataclass
class LsmcResult:
    price: float
    stderr: float
    in_sample: float
    degree_used: list[int]


def lsmc_features(instr: ins.Instrument, s, y=None, z=None, max_sorted: int = 5) -> np.ndarray:
    """Regression state features, scaled by the strike."""
    K = instr.strike
    s = np.asarray(s, dtype=float)
    if instr.kind == "straddle":
        x = s[..., 0] / K
        return np.stack([np.maximum(x - 1.0, 0.0), np.maximum(1.0 - x, 0.0)], axis=-1)
    if instr.kind in ("max_call", "uo_max_call"):
        if instr.latent == "ratios":          # asymmetric assets: keep identities
            feats = [s / K, s.max(axis=-1, keepdims=True) / K]
        else:
            feats = [-np.sort(-s, axis=-1)[..., :max_sorted] / K]
        if instr.kind == "uo_max_call":
            feats.append(np.asarray(z, float)[..., None] / K)
        return np.concatenate(feats, axis=-1)
    feats = [s[..., :1] / K]
    if y is not None:
        feats.append(np.asarray(y, float)[..., None])
    if z is not None:
        feats.append(np.asarray(z, float)[..., None] / K)
    return np.concatenate(feats, axis=-1)


def monomials(x: np.ndarray, degree: int) -> np.ndarray:
    """All monomials of total degree <= ``degree`` in the columns of ``x``."""
    n, k = x.shape
    cols = [np.ones(n)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(k), deg):
            cols.append(np.prod(x[:, combo], axis=1))
    return np.column_stack(cols)


def _fit(features, target, degree):
    basis = monomials(features, degree)
    keep = np.any(basis != 0.0, axis=0)
    basis = basis[:, keep]
    coef, _, rank, _ = np.linalg.lstsq(basis, target, rcond=None)
    if rank < basis.shape[1]:
        # e.g. max(s1, s2) with s1, s2: the fit is still exact on the span, keep min-norm
        warnings.warn(f"rank-deficient regression basis (rank {rank} of {basis.shape[1]}); "
                      "using the minimum-norm solution", stacklevel=3)
    return degree, keep, coef


def _predict(features, fit):
    degree, keep, coef = fit
    return monomials(features, degree)[:, keep] @ coef


def lsmc_price(problem: Problem, config: LsmcConfig | None = None) -> LsmcResult:
    """Longstaff-Schwartz: in-the-money regression on fit paths, then an
    out-of-sample pass on independent paths with the fitted exercise rule."""
    config = config or LsmcConfig()
    instr, model, grid = problem.instrument, problem.model, problem.grid
    lam = np.zeros(model.brownian_dim)
    n = grid.n

    fit_batch = simulate_batch(model, grid, lam, config.n_fit_paths, config.seed, purpose=LSMC_FIT)
    phi = ins.payoff(instr, fit_batch.times, fit_batch.s, fit_batch.y, fit_batch.z)
    cash = phi[:, n].copy()
    fits: list = [None] * n
    degrees = []
    for k in range(n - 1, 0, -1):
        itm = phi[:, k] > 0.0
        if itm.sum() <= 1:
            continue
        y_k = None if fit_batch.y is None else fit_batch.y[itm, k]
        z_k = None if fit_batch.z is None else fit_batch.z[itm, k]
        feats = lsmc_features(instr, fit_batch.s[itm, k], y_k, z_k, config.max_sorted)
        fit = _fit(feats, cash[itm], config.degree)
        fits[k] = fit
        degrees.append(fit[0])
        cont = _predict(feats, fit)
        ex = phi[itm, k] > cont
        idx = np.nonzero(itm)[0][ex]
        cash[idx] = phi[idx, k]
    cont0 = float(cash.mean())
    in_sample = max(cont0, float(phi[:, 0].mean()))
    del fit_batch, phi, cash

    total = total_sq = 0.0
    first = 0
    chunk = 64 * BLOCK
    while first < config.n_price_paths:
        m = min(chunk, config.n_price_paths - first)
        batch = simulate_batch(model, grid, lam, m, config.seed, purpose=LSMC_PRICE, first_path=first)
        phi = ins.payoff(instr, batch.times, batch.s, batch.y, batch.z)
        value = phi[:, n].copy()
        alive = np.ones(m, dtype=bool)
        if phi[0, 0] > cont0:
            value[:] = phi[:, 0]
            alive[:] = False
        for k in range(1, n):
            if fits[k] is None:
                continue
            cand = alive & (phi[:, k] > 0.0)
            if not cand.any():
                continue
            y_k = None if batch.y is None else batch.y[cand, k]
            z_k = None if batch.z is None else batch.z[cand, k]
            feats = lsmc_features(instr, batch.s[cand, k], y_k, z_k, config.max_sorted)
            ex = phi[cand, k] > _predict(feats, fits[k])
            idx = np.nonzero(cand)[0][ex]
            value[idx] = phi[idx, k]
            alive[idx] = False
        total += float(value.sum())
        total_sq += float((value * value).sum())
        first += m
    N = config.n_price_paths
    mean = total / N
    var = max(total_sq / N - mean ** 2, 0.0) * N / max(N - 1, 1)
    return LsmcResult(mean, math.sqrt(var / N), in_sample, degrees)
