"""Fuzzy stopping probabilities, stopping budgets and the relaxed reward.

For a path with exercise dates ``t_0 < ... < t_n = T``::

    p_k = clip((eps - d_k) / (2 eps), 0, 1)    k < n,    p_n = 1
    b_0 = 1,  b_{k+1} = b_k (1 - p_k)
    R   = sum_k Z_k p_k b_k phi_k

``Z_k`` is the likelihood ratio of the sampling measure (1 without importance
sampling). The reverse recursion ``G_k = Z_k p_k phi_k + (1 - p_k) G_{k+1}``
gives ``R = G_0`` and ``dR/dp_k = b_k (Z_k phi_k - G_{k+1})``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import instruments as ins
from .models import PROBE, PathBatch, simulate_batch


class ConfigurationError(ValueError):
    pass


@dataclass
class RewardBreakdown:
    p: np.ndarray
    budget: np.ndarray
    contributions: np.ndarray
    total: float


def stop_prob(d, eps: float) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    return np.clip((eps - np.asarray(d, dtype=float)) / (2.0 * eps), 0.0, 1.0)


def stop_prob_slope(d, eps: float) -> np.ndarray:
    """dp/dd: -1/(2 eps) inside the band, 0 outside (right derivative at the kinks)."""
    u = (eps - np.asarray(d, dtype=float)) / (2.0 * eps)
    return np.where((u > 0.0) & (u <= 1.0), -0.5 / eps, 0.0)


def combine(combinator: str, p_legs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge per-leg probabilities (last axis) into one; also return dp/dp_leg.

    union: 1 - prod(1 - p_leg); intersection: prod(p_leg).
    """
    p_legs = np.asarray(p_legs, dtype=float)
    n_legs = p_legs.shape[-1]
    if combinator == "single" or n_legs == 1:
        if n_legs != 1:
            raise ValueError("single combinator needs exactly one leg")
        return p_legs[..., 0], np.ones_like(p_legs)
    if combinator == "union":
        q = 1.0 - p_legs
        p = 1.0 - q.prod(axis=-1)
        dp = np.stack([np.delete(q, i, axis=-1).prod(axis=-1) for i in range(n_legs)], axis=-1)
        return p, dp
    if combinator == "intersection":
        p = p_legs.prod(axis=-1)
        dp = np.stack([np.delete(p_legs, i, axis=-1).prod(axis=-1) for i in range(n_legs)], axis=-1)
        return p, dp
    raise ValueError(f"unknown combinator {combinator!r}")


def budgets(p: np.ndarray) -> np.ndarray:
    """``b`` from pre-maturity ``p`` (last axis, length n); output has length n + 1."""
    p = np.asarray(p, dtype=float)
    b = np.ones(p.shape[:-1] + (p.shape[-1] + 1,))
    np.cumprod(1.0 - p, axis=-1, out=b[..., 1:])
    return b


def relaxed_reward(p: np.ndarray, phi: np.ndarray, weights: np.ndarray | None = None,
                   with_grad: bool = True):
    """Per-path relaxed reward and its gradient with respect to ``p``.

    ``p``: ``(B, n)`` stop probabilities at pre-maturity dates.
    ``phi``, ``weights``: ``(B, n + 1)``.
    Returns ``(R, dR/dp, b)`` with ``R`` of shape ``(B,)``.
    """
    p = np.atleast_2d(p)
    phi = np.atleast_2d(phi)
    wphi = phi if weights is None else phi * np.atleast_2d(weights)
    n = p.shape[1]
    b = budgets(p)
    g = wphi[:, n].copy()
    dp = np.empty_like(p) if with_grad else None
    for k in range(n - 1, -1, -1):
        if with_grad:
            dp[:, k] = b[:, k] * (wphi[:, k] - g)
        g = p[:, k] * wphi[:, k] + (1.0 - p[:, k]) * g
    return g, dp, b


def reward_path(instr: ins.Instrument, times, s, f_values, eps: float,
                y=None, z=None, weights=None) -> RewardBreakdown:
    """Relaxed reward of one path.

    ``s``: ``(n+1, d)``; ``f_values``: boundary levels ``(n, n_legs)`` at the
    pre-maturity dates (maturity always stops).
    """
    times = np.asarray(times, dtype=float)
    n = times.size - 1
    f_values = np.asarray(f_values, dtype=float).reshape(-1, instr.n_legs)
    if f_values.shape[0] != n:
        raise ValueError(f"boundary values for {n} exercise dates expected, got {f_values.shape[0]}")
    s = np.asarray(s, dtype=float).reshape(n + 1, -1)
    a = ins.alpha(instr, s, z)
    d = ins.signed_distance(instr, f_values, a[:n])
    p, _ = combine(instr.combinator, stop_prob(d, eps))
    phi = ins.payoff(instr, times, s, y, z)
    w = np.ones(n + 1) if weights is None else np.asarray(weights, dtype=float)
    total, _, b = relaxed_reward(p[None], phi[None], w[None], with_grad=False)
    p_full = np.append(p, 1.0)
    return RewardBreakdown(p_full, b[0], w * p_full * b[0] * phi, float(total[0]))


@dataclass
class BatchReward:
    mean: float
    std: float
    per_path: np.ndarray
    grad_f: np.ndarray | None      # d mean / d f, shape (B, n, n_legs)
    band_fraction: float


def batch_reward(instr: ins.Instrument, batch: PathBatch, f: np.ndarray, eps: float,
                 phi: np.ndarray | None = None, alpha_values: np.ndarray | None = None,
                 with_grad: bool = True) -> BatchReward:
    """Empirical reward ``mean_i R_eps(X_i)`` with importance weights.

    ``f`` holds boundary levels at the pre-maturity dates, shape ``(B, n, n_legs)``.
    """
    n_paths, n_dates = batch.weights.shape
    n = n_dates - 1
    if f.shape != (n_paths, n, instr.n_legs):
        raise ValueError(f"boundary array has shape {f.shape}, expected {(n_paths, n, instr.n_legs)}")
    if alpha_values is None:
        alpha_values = ins.alpha(instr, batch.s, batch.z)
    if phi is None:
        phi = ins.payoff(instr, batch.times, batch.s, batch.y, batch.z)
    d = ins.signed_distance(instr, f, alpha_values[:, :n])
    p_legs = stop_prob(d, eps)
    p, dp_dleg = combine(instr.combinator, p_legs)
    r, dr_dp, _ = relaxed_reward(p, phi, batch.weights, with_grad=with_grad)
    in_band = np.abs(d) < eps
    grad_f = None
    if with_grad:
        etas = np.asarray(instr.etas, dtype=float)
        grad_f = (dr_dp[..., None] * dp_dleg * stop_prob_slope(d, eps) * etas) / n_paths
    return BatchReward(float(r.mean()), float(r.std(ddof=1)) if n_paths > 1 else 0.0,
                       r, grad_f, float(in_band.mean()))


def epsilon_default(instr: ins.Instrument, model, grid, n_probe: int = 10_000,
                    seed: int = 0, probe: PathBatch | None = None) -> float:
    """Strike times the standard deviation of one-interval relative moves of alpha(X).

    Relative (log) moves make the width scale with the strike only; for a
    Black-Scholes put this reproduces K sigma sqrt(T/n).
    """
    if probe is None:
        probe = simulate_batch(model, grid, np.zeros(model.brownian_dim), n_probe, seed,
                               purpose=PROBE)
    a = ins.alpha(instr, probe.s, probe.z)
    incr = np.diff(np.log(a), axis=1)
    sd = float(incr.std())
    if not np.isfinite(sd) or sd <= 1e-12:
        raise ConfigurationError("alpha(X) does not move between exercise dates; set eps explicitly")
    return instr.strike * sd
