"""Experiment runner and command line interface.

Config files are YAML. A minimal experiment config::

    preset: bs-put-n50
    seeds: [0, 1, 2]
    train:
      iterations: 3000
      batch_size: 512
      epsilon: auto          # or a number
      learning_rate: 0.001   # optional, preset default otherwise
    price:
      n_paths: 4194304
    out: runs/bs-put

Instead of ``preset`` a problem can be spelled out inline with
``instrument``, ``model`` and ``grid`` blocks (see README).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__, netcore
from . import instruments as ins
from .instruments import Instrument
from .models import TimeGrid, model_from_dict
from .oracles import FDGrid, LsmcConfig, fd_american_put, lsmc_price
from .presets import Problem, get_preset, preset_names
from .pricing import NetBoundary, price_mc
from .train import TrainConfig, net_config_for, train

logger = logging.getLogger(__name__)

DEFAULT_PATHS = 2 ** 22
DEFAULT_SEEDS = tuple(range(10))


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    preset: str | None = None
    inline: dict | None = None                 # instrument / model / grid blocks
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    train: dict = field(default_factory=dict)  # TrainConfig overrides
    n_paths: int = DEFAULT_PATHS
    out: str | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        if (self.preset is None) == (self.inline is None):
            raise ValueError("give exactly one of a preset name or inline problem blocks")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.preset is not None and self.preset not in preset_names():
            raise KeyError(f"unknown preset {self.preset!r}; choose from {', '.join(preset_names())}")
        unknown = set(self.train) - set(TrainConfig.__dataclass_fields__) - {"seed"}
        if unknown:
            raise ValueError(f"unknown train settings: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        inline = {k: d.pop(k) for k in ("instrument", "model", "grid", "lambda", "theta0",
                                         "epsilon", "name") if k in d} or None
        price = d.pop("price", {}) or {}
        return cls(preset=d.pop("preset", None), inline=inline,
                   seeds=tuple(d.pop("seeds", DEFAULT_SEEDS)), train=d.pop("train", {}) or {},
                   n_paths=int(price.get("n_paths", d.pop("n_paths", DEFAULT_PATHS))),
                   out=d.pop("out", None), cache_dir=d.pop("cache_dir", None))

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def problem(self) -> Problem:
        if self.preset is not None:
            return get_preset(self.preset)
        return problem_from_dict(self.inline)


def problem_from_dict(d: dict) -> Problem:
    """Build a problem from inline ``instrument``, ``model`` and ``grid`` blocks."""
    instr = Instrument(**d["instrument"])
    model = model_from_dict(d["model"])
    g = dict(d["grid"])
    if "dates" in g:
        grid = TimeGrid(np.asarray(g["dates"], float), int(g.get("substeps", 1)))
    elif g.get("kind", "uniform") == "geometric":
        grid = TimeGrid.geometric(float(g["maturity"]), int(g["n"]),
                                  float(g.get("last_over_first", 0.25)), int(g.get("substeps", 1)))
    else:
        grid = TimeGrid.uniform(float(g["maturity"]), int(g["n"]), int(g.get("substeps", 1)))
    lam = d.get("lambda", [0.0] * model.brownian_dim)
    lam = tuple(float(v) for v in np.broadcast_to(np.atleast_1d(lam), (model.brownian_dim,)))
    theta0 = tuple(d.get("theta0", instr.default_theta0()))
    eps = d.get("epsilon")
    return Problem(d.get("name", instr.name or instr.kind), instr, model, grid, lam, theta0,
                   None if eps in (None, "auto") else float(eps))


def train_config(problem: Problem, overrides: dict, seed: int) -> TrainConfig:
    kw = dict(problem.train_defaults)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    kw["seed"] = seed
    if "lam" in kw and kw["lam"] is not None:
        kw["lam"] = tuple(np.broadcast_to(np.atleast_1d(np.asarray(kw["lam"], float)),
                                          (problem.model.brownian_dim,)).tolist())
    return TrainConfig(**kw)


# ---------------------------------------------------------------------------
# caching

def code_fingerprint() -> str:
    """Hash of the package sources; cached results are invalidated by any code change."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def run_key(problem: Problem, tc: TrainConfig, n_paths: int) -> str:
    payload = {"problem": problem.to_dict(), "train": asdict(tc), "n_paths": n_paths,
               "code": code_fingerprint()}
    blob = json.dumps(payload, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:20]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, default=_json_default))
    tmp.replace(path)


# ---------------------------------------------------------------------------
# experiments

def run_seed(problem: Problem, tc: TrainConfig, n_paths: int, cache_dir=None) -> dict:
    """Train and price one seed; reuses a cached result with the same key."""
    key = run_key(problem, tc, n_paths)
    if cache_dir is not None:
        cached = Path(cache_dir) / f"{key}.json"
        ckpt = Path(cache_dir) / f"{key}.sbn"
        if cached.exists() and ckpt.exists():
            logger.info("seed %d: cached result %s", tc.seed, key)
            return json.loads(cached.read_text())
    rep = train(problem, config=tc)
    price = price_mc(problem, NetBoundary(rep.net_config, rep.theta), n_paths, seed=tc.seed)
    result = {"key": key, "seed": tc.seed, "train": rep.to_dict(with_trace=False),
              "reward_trace_every_10": rep.rewards[::10].tolist(),
              "price": price.to_dict(), "theta": rep.theta.tolist()}
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        netcore.save_checkpoint(Path(cache_dir) / f"{key}.sbn", rep.net_config, rep.theta,
                                tc.seed, tc.iterations, extra={"problem": problem.name})
        _write_json(Path(cache_dir) / f"{key}.json", result)
    return result


def aggregate(runs: list[dict]) -> dict:
    prices = np.array([r["price"]["price"] for r in runs])
    best = int(np.argmax(prices))
    return {
        "n_runs": len(runs),
        "mean_price": float(prices.mean()),
        "std_price": float(prices.std(ddof=1)) if len(runs) > 1 else 0.0,
        "highest_price": float(prices[best]),
        "highest_stderr": runs[best]["price"]["stderr"],
        "highest_seed": runs[best]["seed"],
        "lowest_price": float(prices.min()),
        "mean_train_seconds": float(np.mean([r["train"]["wall_clock"] for r in runs])),
        "mean_european": float(np.mean([r["price"]["european"] for r in runs])),
    }


def run_experiment(config: ExperimentConfig) -> dict:
    problem = config.problem()
    out = Path(config.out) if config.out else None
    cache = config.cache_dir or (str(out / "cache") if out else None)
    start = time.perf_counter()
    runs = []
    for seed in config.seeds:
        tc = train_config(problem, config.train, seed)
        logger.info("%s seed %d: training %d iterations", problem.name, seed, tc.iterations)
        res = run_seed(problem, tc, config.n_paths, cache)
        logger.info("%s seed %d: price %.4f (%.4f)", problem.name, seed,
                    res["price"]["price"], res["price"]["stderr"])
        runs.append(res)
        if out is not None:
            cfg = netcore.NetConfig.from_dict(res["train"]["net_config"])
            dump_boundary(cfg, np.asarray(res["theta"]), problem,
                          default_sampling(problem), out / f"boundary_seed{seed}.csv")
    manifest = {
        "version": __version__,
        "code": code_fingerprint(),
        "config": {"preset": config.preset, "inline": config.inline, "seeds": list(config.seeds),
                   "train": config.train, "n_paths": config.n_paths},
        "problem": problem.to_dict(),
        "reference": problem.reference,
        "runs": [{k: v for k, v in r.items() if k != "theta"} for r in runs],
        "aggregate": aggregate(runs),
        "wall_clock": time.perf_counter() - start,
    }
    if out is not None:
        _write_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# acceptance bands

def acceptance_checks(name: str, manifest: dict) -> list[tuple[str, bool, str]]:
    """``(label, passed, detail)`` for the reproduction bands of a preset."""
    agg = manifest["aggregate"]
    mean, high = agg["mean_price"], agg["highest_price"]
    checks = []

    def band(label, value, lo, hi):
        checks.append((label, lo <= value <= hi, f"{value:.4f} in [{lo:.4f}, {hi:.4f}]"))

    if name == "bs-put-n50":
        band("mean price", mean, 5.28, 5.33)
        band("highest price", high, 5.311 - 0.03, 5.311 + 0.03)
    elif name == "heston-put":
        band("mean price", mean, 5.033 - 0.04, 5.033 + 0.04)
    elif name == "straddle":
        band("mean price", mean, 12.080 - 0.06, 12.080 + 0.06)
    elif name == "maxcall-d2":
        band("highest price", high, 13.86, 13.96)
    elif name == "maxcall-d5":
        band("highest price", high, 26.05, 26.20)
    elif name.startswith("maxcall-d"):
        lo, hi = manifest["reference"]["ci"]
        band("highest price", high, lo - 0.15, hi + 0.15)
    elif name == "maxcall-asym":
        band("mean price", mean, 15.551 - 0.06, 15.551 + 0.06)
    elif name.startswith("uo-maxcall-d"):
        lo, hi = manifest["reference"]["interval"]
        band("highest price", high, lo, hi)
    elif name == "lookback-fixed-call":
        for r in manifest["runs"]:
            p = r["price"]
            se = p["stderr"]
            band(f"seed {r['seed']} inside European bounds", p["price"],
                 p["european"] - 3 * se, p["upper_bound"] + 3 * se)
    return checks


# ---------------------------------------------------------------------------
# boundary dumps

_LATENT_RANGES = {"variance": (0.01, 0.64), "drawdown": (0.0, 1.0), "extreme_ratio": (1.0, 2.0),
                  "ratios": (0.0, 1.0), "sorted_ratios": (0.0, 1.0), "sorted_ratios_z": (0.0, 1.0)}


def default_sampling(problem: Problem, points: int = 21) -> list[np.ndarray]:
    """Grid over the first one or two latent coordinates; the rest held at the
    initial state's value."""
    instr, model = problem.instrument, problem.model
    k = instr.latent_dim
    if k == 0:
        return []
    s0 = np.atleast_1d(np.asarray(model.s0, float))[None]
    y0 = np.array([model.y0]) if model.has_variance else None
    z0 = None
    if instr.path_functional is not None:
        z0 = np.array([s0.max() if model.z_floor is None else max(s0.max(), model.z_floor)])
    held = ins.latent(instr, s0, y0, z0)[0]
    lo, hi = _LATENT_RANGES[instr.latent]
    axes = [np.array([v]) for v in held]
    for j in range(min(k, 2)):
        if instr.latent == "sorted_ratios_z" and j == k - 1:
            continue
        axes[j] = np.linspace(lo, hi, points)
    return axes


def dump_boundary(net_config: netcore.NetConfig, theta: np.ndarray, problem: Problem,
                  sampling: list, path=None, times=None) -> list[list[float]]:
    """Row-major scan of ``g(t, xi)`` over exercise dates and a latent grid.

    ``sampling`` holds one 1-D array per latent coordinate. Writes CSV if
    ``path`` is given and returns the rows.
    """
    k = net_config.latent_dim
    if len(sampling) != k:
        raise ValueError(f"sampling spec needs {k} axes, got {len(sampling)}")
    if any(len(a) == 0 for a in sampling):
        raise ValueError("empty sampling axis")
    times = problem.grid.dates[:-1] if times is None else np.asarray(times, float)
    if times.size == 0:
        raise ValueError("no sampling times")
    xi = (np.array(list(itertools.product(*sampling)), dtype=float) if k
          else np.zeros((1, 0)))
    rows = []
    for t in times:
        g = netcore.forward(net_config, theta, np.full(xi.shape[0], t), xi)
        for x, v in zip(xi, g):
            rows.append([float(t), *x.tolist(), *v.tolist()])
    if problem.instrument.latent == "variance":
        _check_variance_monotone(rows, problem.instrument.n_legs)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = ["t"] + [f"xi{j}" for j in range(k)] + [f"g{j}" for j in range(net_config.output_dim)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            w.writerows([[repr(v) for v in r] for r in rows])
    return rows


def _check_variance_monotone(rows, n_legs):
    # a put boundary should not increase with the spot variance
    arr = np.asarray(rows)
    for t in np.unique(arr[:, 0]):
        sel = arr[arr[:, 0] == t]
        order = np.argsort(sel[:, 1])
        g = sel[order, 2:2 + n_legs]
        if np.any(np.diff(g, axis=0) > 1e-9):
            warnings.warn(f"boundary increases with variance at t={t:.4f}", stacklevel=3)
            return


# ---------------------------------------------------------------------------
# command line

def _floats(text):
    return [float(v) for v in str(text).split(",")]


def _train_overrides(args) -> dict:
    kw = {}
    if getattr(args, "iters", None) is not None:
        kw["iterations"] = args.iters
    if getattr(args, "batch", None) is not None:
        kw["batch_size"] = args.batch
    if getattr(args, "epsilon", None) is not None:
        kw["epsilon"] = args.epsilon if args.epsilon == "auto" else float(args.epsilon)
    if getattr(args, "lam", None) is not None:
        kw["lam"] = tuple(_floats(args.lam))
    if getattr(args, "lr", None) is not None:
        kw["learning_rate"] = args.lr
    return kw


def _problem_from_args(args) -> Problem:
    if getattr(args, "config", None):
        return ExperimentConfig.from_yaml(args.config).problem()
    if not args.preset:
        raise SystemExit("give --preset or --config")
    return get_preset(args.preset)


def _emit(obj, out):
    text = json.dumps(obj, indent=2, default=_json_default)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    print(text)


def cmd_presets(args) -> int:
    for name in preset_names():
        p = get_preset(name)
        print(f"{name:22s} {p.description}")
    return 0


def cmd_train(args) -> int:
    problem = _problem_from_args(args)
    tc = train_config(problem, _train_overrides(args), args.seed)
    rep = train(problem, config=tc)
    out = Path(args.out or f"{problem.name}-seed{args.seed}.sbn")
    netcore.save_checkpoint(out, rep.net_config, rep.theta, args.seed, tc.iterations,
                            extra={"problem": problem.name, "epsilon": rep.epsilon})
    _emit({"checkpoint": str(out), **rep.to_dict(with_trace=False)},
          out.with_suffix(".json"))
    return 0


def cmd_price(args) -> int:
    problem = _problem_from_args(args)
    cfg, theta, header = netcore.load_checkpoint(args.checkpoint)
    lam = _floats(args.lam) if args.lam else None
    rep = price_mc(problem, NetBoundary(cfg, theta), args.paths, seed=args.seed, lam=lam)
    _emit(rep.to_dict(), args.out)
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        config = ExperimentConfig.from_yaml(args.config)
    else:
        if not args.preset:
            raise SystemExit("give --preset or --config")
        config = ExperimentConfig(preset=args.preset)
    kw = _train_overrides(args)
    updates = {"train": {**config.train, **kw}}
    if args.seeds:
        updates["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.paths:
        updates["n_paths"] = args.paths
    if args.out:
        updates["out"] = args.out
    if args.cache_dir:
        updates["cache_dir"] = args.cache_dir
    config = replace(config, **updates)
    manifest = run_experiment(config)
    agg = manifest["aggregate"]
    print(json.dumps(agg, indent=2))
    if args.check:
        name = config.preset or manifest["problem"]["name"]
        checks = acceptance_checks(name, manifest)
        for label, ok, detail in checks:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {label}: {detail}")
        if not checks:
            print(f"no acceptance band defined for {name}")
        return 0 if all(ok for _, ok, _ in checks) else 1
    return 0


def cmd_dump_boundary(args) -> int:
    problem = _problem_from_args(args)
    if args.checkpoint:
        cfg, theta, _ = netcore.load_checkpoint(args.checkpoint)
    else:
        cfg = net_config_for(problem)
        theta = netcore.init_params(cfg, np.random.default_rng(0))
    rows = dump_boundary(cfg, theta, problem, default_sampling(problem, args.points), args.out)
    if not args.out:
        w = csv.writer(sys.stdout)
        w.writerows([[repr(v) for v in r] for r in rows])
    return 0


def cmd_oracle(args) -> int:
    if args.oracle == "fd-put":
        dates = np.linspace(0.0, args.maturity, args.dates + 1)
        res = fd_american_put(args.rate, args.dividend, args.sigma, args.strike, args.maturity,
                              dates, FDGrid(nodes=args.nodes, time_steps=args.steps),
                              obstacle=not args.european)
        if args.boundary_csv:
            res.boundary_csv(args.boundary_csv)
        _emit({"value": res.value(args.s0), "s0": args.s0, "nodes": args.nodes,
               "time_steps": args.steps}, args.out)
        return 0
    problem = _problem_from_args(args)
    res = lsmc_price(problem, LsmcConfig(n_fit_paths=args.fit_paths, n_price_paths=args.paths,
                                         degree=args.degree, seed=args.seed))
    _emit(asdict(res), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stopbound", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def problem_args(p):
        p.add_argument("--preset")
        p.add_argument("--config", help="YAML experiment config")

    def train_args(p):
        p.add_argument("--iters", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--epsilon", help="fuzzy half-width or 'auto'")
        p.add_argument("--lambda", dest="lam", help="drift shift, comma separated")
        p.add_argument("--lr", type=float, help="Adam step size")

    p = sub.add_parser("presets", help="list presets")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("train", help="train one boundary network")
    problem_args(p)
    train_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("price", help="sharp-boundary Monte Carlo price of a checkpoint")
    problem_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--paths", type=int, default=DEFAULT_PATHS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam")
    p.add_argument("--out")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("experiment", help="train and price over several seeds")
    problem_args(p)
    train_args(p)
    p.add_argument("--seeds", help="comma separated, default 0..9")
    p.add_argument("--paths", type=int)
    p.add_argument("--out")
    p.add_argument("--cache-dir")
    p.add_argument("--check", action="store_true", help="exit 1 if a reproduction band fails")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("dump-boundary", help="CSV scan of a boundary network")
    problem_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--points", type=int, default=21)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_boundary)

    p = sub.add_parser("oracle", help="reference prices")
    osub = p.add_subparsers(dest="oracle", required=True)
    fd = osub.add_parser("fd-put", help="Crank-Nicolson Bermudan put")
    fd.add_argument("--rate", type=float, default=0.06)
    fd.add_argument("--dividend", type=float, default=0.0)
    fd.add_argument("--sigma", type=float, default=0.4)
    fd.add_argument("--strike", type=float, default=40.0)
    fd.add_argument("--maturity", type=float, default=1.0)
    fd.add_argument("--dates", type=int, default=50, help="number of exercise intervals")
    fd.add_argument("--s0", type=float, default=40.0)
    fd.add_argument("--nodes", type=int, default=800)
    fd.add_argument("--steps", type=int, default=2000)
    fd.add_argument("--european", action="store_true")
    fd.add_argument("--boundary-csv")
    fd.add_argument("--out")
    fd.set_defaults(func=cmd_oracle)
    ls = osub.add_parser("lsmc", help="Longstaff-Schwartz price of a preset")
    problem_args(ls)
    ls.add_argument("--fit-paths", type=int, default=2 ** 18)
    ls.add_argument("--paths", type=int, default=2 ** 20)
    ls.add_argument("--degree", type=int, default=3)
    ls.add_argument("--seed", type=int, default=0)
    ls.add_argument("--out")
    ls.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
