"""State simulation under the drift-shifted measure Q_lambda.

Paths are generated on a sub-grid of each exercise interval and recorded at
exercise dates only. Brownian increments are drawn under Q_lambda; the
Q-increments ``dW = dW_lambda - lambda dt`` drive the model, and the
likelihood ratio ``dQ/dQ_lambda = exp(lambda . W_lambda - |lambda|^2 t / 2)``
is accumulated along the way.

Random numbers come from counter-based Philox streams, one per block of
``BLOCK`` consecutive path indices, so path ``i`` of a batch depends only on
``(seed, purpose, i)`` and never on how a large batch is chunked.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

BLOCK = 1024

# stream purposes, mixed into the seed sequence
TRAIN, PRICE, PROBE, LSMC_FIT, LSMC_PRICE, INITIAL = 1, 2, 3, 4, 5, 6


@dataclass(frozen=True)
class TimeGrid:
    dates: np.ndarray
    substeps: int = 1

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype=float)
        object.__setattr__(self, "dates", dates)
        if dates.ndim != 1 or dates.size < 2:
            raise ValueError("need at least two exercise dates")
        if np.any(np.diff(dates) <= 0):
            raise ValueError("exercise dates must be strictly increasing")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @classmethod
    def uniform(cls, maturity: float, n: int, substeps: int = 1, start: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(start, maturity, n + 1), substeps)

    @classmethod
    def geometric(cls, maturity: float, n: int, last_over_first: float = 0.25,
                  substeps: int = 1) -> "TimeGrid":
        """Intervals shrinking geometrically so the last is ``last_over_first`` x the first."""
        q = last_over_first ** (1.0 / (n - 1)) if n > 1 else 1.0
        widths = q ** np.arange(n)
        dates = np.concatenate([[0.0], np.cumsum(widths)])
        return cls(dates * maturity / dates[-1], substeps)

    @property
    def n(self) -> int:
        return self.dates.size - 1

    @property
    def maturity(self) -> float:
        return float(self.dates[-1])

    @property
    def sim_times(self) -> np.ndarray:
        pieces = [np.linspace(a, b, self.substeps + 1)[:-1]
                  for a, b in zip(self.dates[:-1], self.dates[1:])]
        return np.concatenate(pieces + [self.dates[-1:]])

    def to_dict(self) -> dict:
        return {"dates": self.dates.tolist(), "substeps": self.substeps}


@dataclass(frozen=True)
class BlackScholes:
    """Independent geometric Brownian motions with continuous dividends."""
    s0: np.ndarray
    rate: float
    dividend: np.ndarray
    sigma: np.ndarray
    path_functional: str | None = None   # None | "running_max" | "running_min"
    z_floor: float | None = None

    def __post_init__(self):
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        d = s0.size
        div = np.broadcast_to(np.asarray(self.dividend, dtype=float), (d,)).copy()
        sig = np.broadcast_to(np.asarray(self.sigma, dtype=float), (d,)).copy()
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "dividend", div)
        object.__setattr__(self, "sigma", sig)
        if np.any(s0 <= 0):
            raise ValueError("initial prices must be positive")
        if np.any(sig < 0):
            raise ValueError("volatility must be non-negative")
        _check_functional(self.path_functional)

    @property
    def n_assets(self) -> int:
        return self.s0.size

    @property
    def brownian_dim(self) -> int:
        return self.n_assets

    @property
    def has_variance(self) -> bool:
        return False

    def to_dict(self) -> dict:
        return {"type": "black_scholes", "s0": self.s0.tolist(), "rate": self.rate,
                "dividend": self.dividend.tolist(), "sigma": self.sigma.tolist(),
                "path_functional": self.path_functional, "z_floor": self.z_floor}


@dataclass(frozen=True)
class Heston:
    """One stock with CIR variance; ``rho`` correlates the two Brownians.

    Only the stock Brownian is drift-shifted, so ``brownian_dim`` is 1.
    """
    s0: float
    rate: float
    y0: float
    kappa: float
    ybar: float
    sigma_y: float
    rho: float
    gamma_q: float = 0.0
    dividend: float = 0.0
    path_functional: str | None = None
    z_floor: float | None = None

    def __post_init__(self):
        if self.s0 <= 0 or self.y0 <= 0 or self.ybar <= 0:
            raise ValueError("s0, y0 and ybar must be positive")
        if self.sigma_y < 0 or self.kappa < 0:
            raise ValueError("sigma_y and kappa must be non-negative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if 2 * self.kappa * self.ybar < self.sigma_y ** 2:
            warnings.warn("Feller condition 2 kappa ybar >= sigma_y^2 is violated", stacklevel=2)
        _check_functional(self.path_functional)

    @property
    def feller(self) -> bool:
        return 2 * self.kappa * self.ybar >= self.sigma_y ** 2

    @property
    def n_assets(self) -> int:
        return 1

    @property
    def brownian_dim(self) -> int:
        return 1

    @property
    def has_variance(self) -> bool:
        return True

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("s0", "rate", "y0", "kappa", "ybar", "sigma_y",
                                            "rho", "gamma_q", "dividend", "path_functional",
                                            "z_floor")}
        d["type"] = "heston"
        return d


ModelSpec = Union[BlackScholes, Heston]


def _check_functional(name):
    if name not in (None, "running_max", "running_min"):
        raise ValueError(f"unknown path functional {name!r}")


def model_from_dict(d: dict) -> ModelSpec:
    d = dict(d)
    kind = d.pop("type")
    if kind == "black_scholes":
        return BlackScholes(**d)
    if kind == "heston":
        return Heston(**d)
    raise ValueError(f"unknown model type {kind!r}")


@dataclass
class PathBatch:
    """States at exercise dates.

    ``s`` has shape ``(B, n+1, d)``; ``y`` and ``z`` are ``(B, n+1)`` or None;
    ``weights`` holds the likelihood ratio dQ/dQ_lambda at each date.
    """
    times: np.ndarray
    s: np.ndarray
    weights: np.ndarray
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    seed: int | None = None
    first_path: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]

    def state_at(self, k):
        """``(s, y, z)`` at date index ``k`` for every path."""
        y = None if self.y is None else self.y[:, k]
        z = None if self.z is None else self.z[:, k]
        return self.s[:, k], y, z

    def take(self, idx) -> "PathBatch":
        return PathBatch(self.times, self.s[idx], self.weights[idx],
                         None if self.y is None else self.y[idx],
                         None if self.z is None else self.z[idx],
                         self.seed, self.first_path, dict(self.meta))

    def to_csv(self, path) -> None:
        """Debug dump: one row per (path, date)."""
        import csv
        d = self.s.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "date_index", "t"] + [f"s{i}" for i in range(d)]
                       + ["y", "z", "weight"])
            for i in range(self.n_paths):
                for k, t in enumerate(self.times):
                    y = "" if self.y is None else repr(float(self.y[i, k]))
                    z = "" if self.z is None else repr(float(self.z[i, k]))
                    w.writerow([self.first_path + i, k, repr(float(t))]
                               + [repr(float(v)) for v in self.s[i, k]]
                               + [y, z, repr(float(self.weights[i, k]))])


def block_normals(seed: int, purpose: int, first_path: int, n_paths: int,
                  per_path: int, stream: int = 0) -> np.ndarray:
    """Standard normals of shape ``(n_paths, per_path)`` for paths
    ``first_path .. first_path + n_paths - 1``.

    Each block of ``BLOCK`` path indices owns a Philox stream keyed by
    ``(seed, purpose, stream, block)``; draws inside a block are path-major,
    so any path's numbers are independent of the requested range.
    """
    out = np.empty((n_paths, per_path))
    pos = 0
    idx = first_path
    end = first_path + n_paths
    while idx < end:
        block, offset = divmod(idx, BLOCK)
        take = min(BLOCK - offset, end - idx)
        ss = np.random.SeedSequence([seed, purpose, stream, block])
        gen = np.random.Generator(np.random.Philox(ss))
        draws = gen.standard_normal((offset + take) * per_path)
        out[pos:pos + take] = draws[offset * per_path:].reshape(take, per_path)
        pos += take
        idx += take
    return out


def block_uniforms(seed: int, purpose: int, first_path: int, n_paths: int,
                   per_path: int, stream: int = 0) -> np.ndarray:
    out = np.empty((n_paths, per_path))
    pos = 0
    idx = first_path
    end = first_path + n_paths
    while idx < end:
        block, offset = divmod(idx, BLOCK)
        take = min(BLOCK - offset, end - idx)
        ss = np.random.SeedSequence([seed, purpose, stream, block])
        gen = np.random.Generator(np.random.Philox(ss))
        draws = gen.random((offset + take) * per_path)
        out[pos:pos + take] = draws[offset * per_path:].reshape(take, per_path)
        pos += take
        idx += take
    return out


def gbm_step(s, rate, dividend, sigma, dt, dw):
    """Exact log-normal step driven by the Q-increment ``dw`` (not normalised)."""
    return s * np.exp((rate - dividend - 0.5 * sigma ** 2) * dt + sigma * dw)


def milstein_variance_step(y, kappa, ybar, gamma_q, sigma_y, dt, w):
    """Milstein step of the variance with full truncation; ``w`` is N(0, 1)."""
    y = np.maximum(y, 0.0)
    sq = np.sqrt(dt)
    y_new = (y + (kappa * (ybar - y) - gamma_q * y) * dt
             + sigma_y * np.sqrt(y) * sq * w
             + 0.25 * sigma_y ** 2 * (dt * w * w - dt))
    return np.maximum(y_new, 0.0)


def simulate_batch(model: ModelSpec, grid: TimeGrid, lam, n_paths: int, seed: int,
                   purpose: int = TRAIN, first_path: int = 0, stream: int = 0,
                   s0: np.ndarray | None = None, z0: np.ndarray | None = None) -> PathBatch:
    """Simulate ``n_paths`` trajectories under Q_lambda.

    ``s0``/``z0`` optionally override the initial stock prices (shape
    ``(n_paths, d)``) and running extreme (``(n_paths,)``) path by path.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.size == 1 and model.brownian_dim > 1:
        lam = np.full(model.brownian_dim, lam[0])
    if lam.shape != (model.brownian_dim,):
        raise ValueError(f"lambda has dimension {lam.size}, model needs {model.brownian_dim}")

    n, m = grid.n, grid.substeps
    steps = n * m
    sub_dt = np.repeat(np.diff(grid.dates) / m, m)
    if np.any(sub_dt <= 0):
        raise ValueError("non-positive time step")

    d = model.n_assets
    n_brown = d + (1 if model.has_variance else 0)
    normals = block_normals(seed, purpose, first_path, n_paths, steps * n_brown, stream)
    normals = normals.reshape(n_paths, steps, n_brown)

    if s0 is None:
        s = np.broadcast_to(np.atleast_1d(model.s0), (n_paths, d)).astype(float)
    else:
        s = np.array(s0, dtype=float).reshape(n_paths, d)

    track = model.path_functional
    if track is not None:
        ref = s.max(axis=1) if track == "running_max" else s.min(axis=1)
        if z0 is not None:
            z = np.asarray(z0, dtype=float).copy()
        elif model.z_floor is not None:
            z = np.maximum(ref, model.z_floor) if track == "running_max" else np.minimum(ref, model.z_floor)
        else:
            z = ref.copy()
    else:
        z = None

    y = np.full(n_paths, model.y0) if model.has_variance else None

    out_s = np.empty((n_paths, n + 1, d))
    out_w = np.empty((n_paths, n + 1))
    out_y = np.empty((n_paths, n + 1)) if y is not None else None
    out_z = np.empty((n_paths, n + 1)) if z is not None else None
    log_w = np.zeros(n_paths)

    def record(k):
        out_s[:, k] = s
        out_w[:, k] = np.exp(log_w)
        if y is not None:
            out_y[:, k] = y
        if z is not None:
            out_z[:, k] = z

    record(0)
    lam_sq = float(lam @ lam)
    shifted = lam_sq > 0.0
    for j in range(steps):
        dt = sub_dt[j]
        sq = np.sqrt(dt)
        if model.has_variance:
            dw_lam = normals[:, j, 0] * sq            # Q_lambda increment
            dw = dw_lam - lam[0] * dt                  # Q increment of the stock Brownian
            dperp = normals[:, j, 1] * sq
            dw_var = model.rho * dw + np.sqrt(1.0 - model.rho ** 2) * dperp
            y_now = np.maximum(y, 0.0)
            s = s * np.exp(((model.rate - model.dividend - 0.5 * y_now) * dt
                            + np.sqrt(y_now) * dw))[:, None]
            y = milstein_variance_step(y, model.kappa, model.ybar, model.gamma_q,
                                       model.sigma_y, dt, dw_var / sq)
            if shifted:
                log_w += lam[0] * dw_lam - 0.5 * lam_sq * dt
        else:
            dw_lam = normals[:, j, :] * sq
            dw = dw_lam - lam * dt
            s = gbm_step(s, model.rate, model.dividend, model.sigma, dt, dw)
            if shifted:
                log_w += dw_lam @ lam - 0.5 * lam_sq * dt
        if z is not None:
            if track == "running_max":
                np.maximum(z, s.max(axis=1), out=z)
            else:
                np.minimum(z, s.min(axis=1), out=z)
        if (j + 1) % m == 0:
            record((j + 1) // m)

    return PathBatch(grid.dates.copy(), out_s, out_w, out_y, out_z, seed, first_path,
                     {"lambda": lam.tolist(), "purpose": purpose})
