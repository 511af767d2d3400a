"""Deep empirical risk minimisation of the relaxed stopping reward.

Each iteration simulates a fresh batch under the drift-shifted measure,
evaluates the boundary network at every pre-maturity exercise date, computes
the importance-weighted relaxed reward and takes one Adam ascent step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import instruments as ins
from . import netcore
from .models import INITIAL, TRAIN, PathBatch, block_uniforms, simulate_batch
from .presets import Problem
from .relax import BatchReward, batch_reward, epsilon_default

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 512
    epsilon: float | str = "auto"
    lam: tuple[float, ...] | None = None     # None: the preset's shift
    seed: int = 0
    learning_rate: float | None = None        # None: the preset's choice, else 1e-3
    log_every: int = 100
    n_probe: int = 10_000

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")


@dataclass
class TrainReport:
    theta: np.ndarray
    net_config: netcore.NetConfig
    rewards: np.ndarray
    wall_clock: float
    seed: int
    epsilon: float
    lam: np.ndarray
    diagnostics: list[dict] = field(default_factory=list)
    learning_rate: float = 1e-3

    def to_dict(self, with_trace: bool = True) -> dict:
        d = {"seed": self.seed, "epsilon": self.epsilon, "lambda": self.lam.tolist(),
             "learning_rate": self.learning_rate, "wall_clock": self.wall_clock, "iterations": int(self.rewards.size),
             "final_reward_mean_last100": float(self.rewards[-100:].mean()) if self.rewards.size else None,
             "net_config": self.net_config.to_dict(), "diagnostics": self.diagnostics}
        if with_trace:
            d["reward_trace"] = self.rewards.tolist()
        return d


def net_config_for(problem: Problem, **overrides) -> netcore.NetConfig:
    kw = dict(latent_dim=problem.instrument.latent_dim, maturity=problem.grid.maturity,
              output_bias_init=problem.theta0)
    kw.update(overrides)
    return netcore.NetConfig(**kw)


def resolve_epsilon(problem: Problem, config: TrainConfig) -> float:
    if config.epsilon not in (None, "auto"):
        eps = float(config.epsilon)
    elif problem.epsilon is not None:
        eps = float(problem.epsilon)
    else:
        eps = epsilon_default(problem.instrument, problem.model, problem.grid,
                              n_probe=config.n_probe, seed=config.seed)
    if eps <= 0:
        raise ValueError("eps must be positive")
    return eps


def initial_states(problem: Problem, n_paths: int, seed: int, stream: int):
    """Randomised initial prices for presets that train from a spread of s0."""
    if problem.train_s0_range is None:
        return None
    lo, hi = problem.train_s0_range
    d = problem.model.n_assets
    u = block_uniforms(seed, INITIAL, 0, n_paths, d, stream)
    return lo + (hi - lo) * u


def simulate_training_batch(problem: Problem, lam, n_paths: int, seed: int, iteration: int) -> PathBatch:
    s0 = initial_states(problem, n_paths, seed, iteration)
    return simulate_batch(problem.model, problem.grid, lam, n_paths, seed,
                          purpose=TRAIN, stream=iteration, s0=s0)


def empirical_reward(problem: Problem, net_config: netcore.NetConfig, theta: np.ndarray,
                     batch: PathBatch, eps: float, with_grad: bool = True
                     ) -> tuple[float, np.ndarray | None, BatchReward]:
    """Mean relaxed reward over the batch and its gradient in theta."""
    instr = problem.instrument
    n = batch.times.size - 1
    n_paths = batch.n_paths
    a = ins.alpha(instr, batch.s, batch.z)
    phi = ins.payoff(instr, batch.times, batch.s, batch.y, batch.z)
    t = batch.times[:n]

    if net_config.latent_dim == 0:
        # boundary depends on time only: one row per date
        inputs = netcore.network_inputs(net_config, t, ())
        cache = netcore.forward_cached(net_config, theta, inputs)
        f = np.broadcast_to(cache.output, (n_paths, n, net_config.output_dim))
    else:
        xi = ins.latent(instr, batch.s[:, :n], None if batch.y is None else batch.y[:, :n],
                        None if batch.z is None else batch.z[:, :n])
        xi = xi.reshape(n_paths * n, -1)
        inputs = netcore.network_inputs(net_config, np.tile(t, n_paths), xi)
        cache = netcore.forward_cached(net_config, theta, inputs)
        f = cache.output.reshape(n_paths, n, net_config.output_dim)

    res = batch_reward(instr, batch, f, eps, phi=phi, alpha_values=a, with_grad=with_grad)
    if not with_grad:
        return res.mean, None, res
    if net_config.latent_dim == 0:
        grad_out = res.grad_f.sum(axis=0)
    else:
        grad_out = res.grad_f.reshape(n_paths * n, -1)
    grad = netcore.backward(net_config, theta, cache, grad_out)
    return res.mean, grad, res


def train(problem: Problem, net_config: netcore.NetConfig | None = None,
          config: TrainConfig | None = None, theta: np.ndarray | None = None) -> TrainReport:
    config = config or TrainConfig()
    net_config = net_config or net_config_for(problem)
    if net_config.latent_dim != problem.instrument.latent_dim:
        raise ValueError(f"network latent dimension {net_config.latent_dim} does not match "
                         f"instrument ({problem.instrument.latent_dim})")
    if net_config.output_dim != problem.instrument.n_legs:
        raise ValueError("network output count must equal the number of boundary legs")
    lam = problem.lam_array if config.lam is None else np.atleast_1d(np.asarray(config.lam, float))
    eps = resolve_epsilon(problem, config)

    start = time.perf_counter()
    if theta is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, 0])))
        theta = netcore.init_params(net_config, rng)
    lr = config.learning_rate
    if lr is None:
        lr = problem.train_defaults.get("learning_rate", 1e-3)
    state = netcore.AdamState.zeros(theta.size, lr=lr)
    rewards = np.empty(config.iterations)
    diagnostics = []
    band = []
    for m in range(config.iterations):
        batch = simulate_training_batch(problem, lam, config.batch_size, config.seed, m)
        value, grad, res = empirical_reward(problem, net_config, theta, batch, eps)
        if not np.isfinite(value):
            raise netcore.TrainingDivergence(m, "non-finite reward")
        rewards[m] = value
        band.append(res.band_fraction)
        try:
            theta, state = netcore.adam_step(theta, grad, state)
        except netcore.TrainingDivergence as exc:
            raise netcore.TrainingDivergence(m) from exc
        if config.log_every and (m + 1) % config.log_every == 0:
            lo = m + 1 - config.log_every
            entry = {"iteration": m + 1,
                     "reward_mean": float(rewards[lo:m + 1].mean()),
                     "reward_std": float(rewards[lo:m + 1].std()),
                     "band_fraction": float(np.mean(band[lo:m + 1])),
                     "zero_gradient": bool(not np.any(grad))}
            diagnostics.append(entry)
            logger.info("iter %d reward %.4f band %.3f", m + 1, entry["reward_mean"],
                        entry["band_fraction"])
    wall = time.perf_counter() - start
    return TrainReport(theta, net_config, rewards, wall, config.seed, eps, lam, diagnostics,
                       learning_rate=lr)
