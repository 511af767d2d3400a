"""Payoffs, boundary coordinates and stopping-region combinators.

Every instrument is written in the homogeneous form

    payoff(t, x) = exp(-r t) * (eta * (alpha(s, z) - beta(s, z) - K))^+

(straddles are the union of a put leg and a call leg), and its stopping region
at each date is described through the pair ``(alpha(x), Xi(x))``: a state is
in the stopping half-space of a leg when ``eta * (f(t, Xi(x)) - alpha(x)) <= 0``.

States are passed as ``s`` with shape ``(..., d)``, ``y`` and ``z`` with shape
``(...)`` (``None`` when the model has no such component).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

KINDS = ("put", "call", "straddle", "max_call", "uo_max_call",
         "lookback_fixed_call", "lookback_fixed_put",
         "lookback_floating_call", "lookback_floating_put")

LATENTS = ("none", "variance", "ratios", "sorted_ratios", "sorted_ratios_z",
           "drawdown", "extreme_ratio")


class DomainError(ValueError):
    pass


class Coordinates(NamedTuple):
    alpha: np.ndarray
    xi: np.ndarray


@dataclass(frozen=True)
class Instrument:
    kind: str
    strike: float
    rate: float
    n_assets: int = 1
    latent: str = "none"
    barrier: float | None = None
    gamma: float = 1.0
    max_ratios: int = 5
    combine: str | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown instrument kind {self.kind!r}")
        if self.latent not in LATENTS:
            raise ValueError(f"unknown latent map {self.latent!r}")
        if self.kind == "uo_max_call" and self.barrier is None:
            raise ValueError("up-and-out instrument needs a barrier")
        if self.combine not in (None, "single", "union", "intersection"):
            raise ValueError(f"unknown combinator {self.combine!r}")

    # --- leg structure -------------------------------------------------
    @property
    def etas(self) -> tuple[int, ...]:
        if self.kind == "straddle":
            return (-1, 1)          # leg 0: lower/put, leg 1: upper/call
        if self.kind in ("put", "lookback_fixed_put", "lookback_floating_put"):
            return (-1,)
        return (1,)

    @property
    def combinator(self) -> str:
        if self.combine is not None:
            return self.combine
        return "union" if self.kind == "straddle" else "single"

    @property
    def n_legs(self) -> int:
        return len(self.etas)

    @property
    def path_functional(self) -> str | None:
        if self.kind in ("uo_max_call", "lookback_fixed_call", "lookback_floating_put"):
            return "running_max"
        if self.kind in ("lookback_fixed_put", "lookback_floating_call"):
            return "running_min"
        return None

    @property
    def latent_dim(self) -> int:
        d = self.n_assets
        if self.latent == "none":
            return 0
        if self.latent in ("variance", "drawdown", "extreme_ratio"):
            return 1
        if self.latent == "ratios":
            return d
        k = max(0, min(d - 1, self.max_ratios))
        return k + 1 if self.latent == "sorted_ratios_z" else k

    def default_theta0(self) -> tuple[float, ...]:
        """K/2 for put-type legs, 3K/2 for call-type legs."""
        return tuple(1.5 * self.strike if e > 0 else 0.5 * self.strike for e in self.etas)

    def to_dict(self) -> dict:
        return asdict(self)


def _first(s):
    return np.asarray(s, dtype=float)[..., 0]


def alpha(instr: Instrument, s, z=None) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    k = instr.kind
    if k in ("max_call", "uo_max_call"):
        return s.max(axis=-1)
    if k in ("lookback_fixed_call", "lookback_fixed_put"):
        return np.asarray(z, dtype=float)
    return _first(s)


def beta(instr: Instrument, s, z=None) -> np.ndarray:
    if instr.kind in ("lookback_floating_call", "lookback_floating_put"):
        return instr.gamma * np.asarray(z, dtype=float)
    return np.zeros(np.shape(s)[:-1])


def ratio_coordinates(instr: Instrument, s, y=None, z=None):
    """The scale-free coordinates ``(s / alpha, y, z / alpha)``."""
    a = alpha(instr, s, z)
    s = np.asarray(s, dtype=float)
    zr = None if z is None else np.asarray(z, dtype=float) / a
    return s / a[..., None], y, zr


def latent(instr: Instrument, s, y=None, z=None) -> np.ndarray:
    """Network input Xi(x), shape ``(..., latent_dim)``."""
    s = np.asarray(s, dtype=float)
    lead = s.shape[:-1]
    kind = instr.latent
    if kind == "none":
        return np.zeros(lead + (0,))
    if kind == "variance":
        return np.asarray(y, dtype=float)[..., None]
    a = alpha(instr, s, z)
    if kind == "drawdown":
        return (_first(s) / np.asarray(z, dtype=float))[..., None]
    if kind == "extreme_ratio":
        return (np.asarray(z, dtype=float) / a)[..., None]
    ratios = s / a[..., None]
    if kind == "ratios":
        return ratios
    k = instr.latent_dim - (1 if kind == "sorted_ratios_z" else 0)
    srt = -np.sort(-ratios, axis=-1)[..., 1:1 + k]
    if kind == "sorted_ratios":
        return srt
    return np.concatenate([srt, np.asarray(z, dtype=float)[..., None]], axis=-1)


def coords(instr: Instrument, s, y=None, z=None) -> Coordinates:
    a = alpha(instr, s, z)
    if np.any(a <= 0):
        raise DomainError("alpha(x) must be positive")
    return Coordinates(a, latent(instr, s, y, z))


def payoff(instr: Instrument, t, s, y=None, z=None) -> np.ndarray:
    """Discounted payoff ``exp(-r t) * ...``; zero once an up-and-out barrier is breached."""
    disc = np.exp(-instr.rate * np.asarray(t, dtype=float))
    if instr.kind == "straddle":
        value = np.abs(_first(s) - instr.strike)
    else:
        eta = instr.etas[0]
        value = np.maximum(eta * (alpha(instr, s, z) - beta(instr, s, z) - instr.strike), 0.0)
    if instr.barrier is not None:
        value = np.where(np.asarray(z) <= instr.barrier, value, 0.0)
    return disc * value


def signed_distance(instr: Instrument, f, alpha_values) -> np.ndarray:
    """``d = eta * (f - alpha)`` per leg; ``f`` has shape ``(..., n_legs)``."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != instr.n_legs:
        raise ValueError(f"{instr.n_legs} boundary legs expected, got {f.shape[-1]}")
    etas = np.asarray(instr.etas, dtype=float)
    return etas * (f - np.asarray(alpha_values, dtype=float)[..., None])


def in_stop_region(instr: Instrument, d) -> np.ndarray:
    """Sharp membership from per-leg signed distances."""
    inside = np.asarray(d) <= 0.0
    if instr.combinator == "intersection":
        return inside.all(axis=-1)
    return inside.any(axis=-1)
