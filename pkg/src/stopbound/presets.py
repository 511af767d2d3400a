"""Named experiment presets: instrument, model, exercise grid, drift shift and
network initialisation for each of the reproduced option experiments."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .instruments import Instrument
from .models import BlackScholes, Heston, ModelSpec, TimeGrid


@dataclass(frozen=True)
class Problem:
    name: str
    instrument: Instrument
    model: ModelSpec
    grid: TimeGrid
    lam: tuple[float, ...]
    theta0: tuple[float, ...]
    epsilon: float | None = None             # None: data-driven default
    train_s0_range: tuple[float, float] | None = None
    description: str = ""
    reference: dict = field(default_factory=dict)
    train_defaults: dict = field(default_factory=dict)   # TrainConfig settings for this preset

    @property
    def lam_array(self) -> np.ndarray:
        return np.asarray(self.lam, dtype=float)

    def with_overrides(self, **kw) -> "Problem":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {"name": self.name, "instrument": self.instrument.to_dict(),
                "model": self.model.to_dict(), "grid": self.grid.to_dict(),
                "lambda": list(self.lam), "theta0": list(self.theta0),
                "epsilon": self.epsilon, "train_s0_range": self.train_s0_range,
                "train_defaults": dict(self.train_defaults), "description": self.description}


def max_call_drift(d: int) -> float:
    """Target drift of each asset under the shifted measure, -0.01 ln d."""
    return -0.01 * np.log(d)


def lambda_preset(name: str, d: int | None = None) -> np.ndarray:
    """Girsanov drift shift used for training a preset."""
    base = name.split("-d")[0] if name.startswith(("maxcall-d", "uo-maxcall-d")) else name
    if name.startswith(("bs-put", "heston-put")):
        return np.array([0.275])
    if name in ("straddle", "lookback-fixed-call"):
        return np.zeros(1)
    if name == "maxcall-asym":
        r, sigma = 0.05, 0.2
        div = np.array([0.05, 0.15])
        return (r - div - max_call_drift(2)) / sigma
    if base in ("maxcall", "uo-maxcall"):
        if d is None:
            d = int(name.rsplit("-d", 1)[1])
        r, div, sigma = 0.05, (0.1 if base == "maxcall" else 0.0), 0.2
        return np.full(d, (r - div - max_call_drift(d)) / sigma)
    raise KeyError(f"unknown preset {name!r}")


def _bs_put(n: int, geometric: bool = False) -> Problem:
    K = 40.0
    grid = TimeGrid.geometric(1.0, n) if geometric else TimeGrid.uniform(1.0, n)
    name = f"bs-put-n{n}"
    instr = Instrument("put", K, 0.06, name=name)
    return Problem(
        name, instr, BlackScholes(40.0, 0.06, 0.0, 0.4), grid,
        tuple(lambda_preset(name)), instr.default_theta0(),
        description="Bermudan put, Black-Scholes, s0=K=40, r=6%, sigma=40%, T=1",
        reference={"average": 5.308, "highest": 5.313, "benchmark": 5.311} if n == 50 else {},
    )


def _heston_put() -> Problem:
    K = 40.0
    instr = Instrument("put", K, 0.06, latent="variance", name="heston-put")
    model = Heston(s0=40.0, rate=0.06, y0=0.16, kappa=1.0, ybar=0.16, sigma_y=0.5, rho=-0.5)
    return Problem(
        "heston-put", instr, model, TimeGrid.uniform(1.0, 50, substeps=4),
        tuple(lambda_preset("heston-put")), instr.default_theta0(),
        description="Bermudan put (n=50) under Heston, variance by Milstein on 200 steps",
        reference={"average": 5.033, "highest": 5.037},
    )


def _straddle() -> Problem:
    K = 40.0
    instr = Instrument("straddle", K, 0.06, name="straddle")
    return Problem(
        "straddle", instr, BlackScholes(40.0, 0.06, 0.06, 0.4), TimeGrid.uniform(1.0, 50),
        tuple(lambda_preset("straddle")), instr.default_theta0(),
        description="Bermudan straddle, Black-Scholes with dividend 6%",
        reference={"average": 12.080, "highest": 12.087, "lsmc": 12.018},
    )


_MAXCALL_REF = {
    2: {"average": 13.883, "highest": 13.898, "benchmark": 13.901, "ci": (13.892, 13.934)},
    5: {"average": 26.130, "highest": 26.151, "benchmark": 26.147, "ci": (26.115, 26.164)},
    10: {"average": 38.336, "highest": 38.355, "benchmark": 38.272, "ci": (38.300, 38.367)},
    20: {"average": 51.728, "highest": 51.753, "benchmark": 51.572, "ci": (51.549, 51.803)},
    50: {"average": 69.860, "highest": 69.881, "benchmark": 69.572, "ci": (69.560, 69.945)},
}


def _maxcall(d: int) -> Problem:
    K = 100.0
    name = f"maxcall-d{d}"
    instr = Instrument("max_call", K, 0.05, n_assets=d, latent="sorted_ratios", name=name)
    model = BlackScholes(np.full(d, 100.0), 0.05, 0.1, 0.2)
    return Problem(
        name, instr, model, TimeGrid.uniform(3.0, 9),
        tuple(lambda_preset(name)), instr.default_theta0(),
        description=f"Bermudan max-call on {d} symmetric assets, T=3, 9 exercise dates",
        reference=_MAXCALL_REF.get(d, {}),
        train_defaults={"learning_rate": 0.01},
    )


def _maxcall_asym() -> Problem:
    K = 100.0
    instr = Instrument("max_call", K, 0.05, n_assets=2, latent="ratios", name="maxcall-asym")
    model = BlackScholes(np.full(2, 100.0), 0.05, np.array([0.05, 0.15]), 0.2)
    return Problem(
        "maxcall-asym", instr, model, TimeGrid.uniform(3.0, 9),
        tuple(lambda_preset("maxcall-asym")), instr.default_theta0(),
        description="Bermudan max-call on 2 assets with dividends 5% and 15%",
        reference={"average": 15.551, "highest": 15.575, "lsmc": 15.558},
        train_defaults={"learning_rate": 0.01, "iterations": 6000},
    )


_UO_REF = {4: (41.541, 43.853), 8: (50.252, 52.053), 16: (53.638, 55.094)}


def _uo_maxcall(d: int) -> Problem:
    K, barrier = 100.0, 170.0
    name = f"uo-maxcall-d{d}"
    instr = Instrument("uo_max_call", K, 0.05, n_assets=d, latent="sorted_ratios_z",
                       barrier=barrier, name=name)
    model = BlackScholes(np.full(d, 100.0), 0.05, 0.0, 0.2, path_functional="running_max")
    return Problem(
        name, instr, model, TimeGrid.uniform(3.0, 54),
        tuple(lambda_preset(name)), instr.default_theta0(),
        description=f"Bermudan up-and-out max-call on {d} assets, barrier 170, 54 dates",
        reference={"interval": _UO_REF[d]} if d in _UO_REF else {},
    )


def _lookback() -> Problem:
    K = 100.0
    instr = Instrument("lookback_fixed_call", K, 0.02, latent="drawdown",
                       name="lookback-fixed-call")
    model = BlackScholes(100.0, 0.02, 0.04, 0.3, path_functional="running_max", z_floor=K)
    return Problem(
        "lookback-fixed-call", instr, model, TimeGrid.uniform(0.5, 200, substeps=4),
        tuple(lambda_preset("lookback-fixed-call")), instr.default_theta0(),
        train_s0_range=(0.7 * K, 1.3 * K),
        description="American fixed-strike look-back call, 200 dates, 800 simulation steps",
        reference={"average": 16.827, "highest": 16.844, "european": 16.808, "upper": 16.979},
    )


_BUILDERS = {
    "bs-put-n50": lambda: _bs_put(50),
    "bs-put-n250": lambda: _bs_put(250, geometric=True),
    "heston-put": _heston_put,
    "straddle": _straddle,
    "maxcall-d2": lambda: _maxcall(2),
    "maxcall-d5": lambda: _maxcall(5),
    "maxcall-d10": lambda: _maxcall(10),
    "maxcall-d20": lambda: _maxcall(20),
    "maxcall-d50": lambda: _maxcall(50),
    "maxcall-asym": _maxcall_asym,
    "uo-maxcall-d4": lambda: _uo_maxcall(4),
    "uo-maxcall-d8": lambda: _uo_maxcall(8),
    "uo-maxcall-d16": lambda: _uo_maxcall(16),
    "lookback-fixed-call": _lookback,
}


def preset_names() -> list[str]:
    return list(_BUILDERS)


def get_preset(name: str) -> Problem:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(_BUILDERS)}") from None
