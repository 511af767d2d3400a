"""Acceptance criteria at their stated tolerances.

The reproduction criteria train ten networks per preset and price each with
2^22 paths, which takes hours on one core. Results are cached under
``$STOPBOUND_CACHE`` (default ``.acceptance_cache`` in the repo root) keyed by
problem, training settings and a hash of the package sources, so a rerun with
unchanged code only reads the cache. Fill the cache ahead of time with
``scripts/run_acceptance.sh``.

Each criterion records one PASS/FAIL line; the lines are printed in the
terminal summary.
"""

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stopbound import cli, netcore, relax
from stopbound.models import PRICE, TimeGrid, simulate_batch
from stopbound.netcore import AdamState, adam_step
from stopbound.oracles import LsmcConfig, fd_american_put, lsmc_price
from stopbound.presets import get_preset
from stopbound.pricing import CurveBoundary, NetBoundary, price_mc, stop_indices
from stopbound.train import TrainConfig, empirical_reward, net_config_for, train
from stopbound import instruments as ins

from conftest import record

CACHE = Path(os.environ.get("STOPBOUND_CACHE", Path(__file__).resolve().parents[1] / ".acceptance_cache"))
SEEDS = tuple(range(10))
# look-back runs are the slowest (800 simulation steps); the criterion applies to each run
LOOKBACK_SEEDS = (0, 1, 2)
LSMC = LsmcConfig(n_fit_paths=2 ** 18, n_price_paths=2 ** 20, seed=0)


def experiment(preset, seeds=SEEDS):
    cfg = cli.ExperimentConfig(preset=preset, seeds=seeds, cache_dir=str(CACHE / "runs"))
    return cli.run_experiment(cfg)


def cached_lsmc(preset):
    import json
    key = f"lsmc-{preset}-{cli.code_fingerprint()}-{LSMC.n_fit_paths}-{LSMC.n_price_paths}-{LSMC.seed}"
    path = CACHE / "lsmc" / f"{key}.json"
    if path.exists():
        return json.loads(path.read_text())
    res = lsmc_price(get_preset(preset), LSMC)
    out = {"price": res.price, "stderr": res.stderr}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out))
    return out


def check(criterion, label, ok, detail):
    record(criterion, label, ok, detail)
    assert ok, f"{criterion} {label}: {detail}"


# ---------------------------------------------------------------------------
# 1-7: reproduction

@pytest.mark.acceptance
@pytest.mark.filterwarnings("ignore:rank-deficient")
def test_c1_black_scholes_put():
    agg = experiment("bs-put-n50")["aggregate"]
    fd = fd_american_put(0.06, 0.0, 0.4, 40.0, 1.0, np.linspace(0, 1, 51)).value(40.0)
    results = [
        ("mean of 10 runs in [5.28, 5.33]", 5.28 <= agg["mean_price"] <= 5.33,
         f"mean {agg['mean_price']:.4f} (std {agg['std_price']:.4f})"),
        ("best run within 0.03 of 5.311", abs(agg["highest_price"] - 5.311) <= 0.03,
         f"highest {agg['highest_price']:.4f} ({agg['highest_stderr']:.4f})"),
        ("FD value within 0.02 of 5.311", abs(fd - 5.311) <= 0.02, f"FD {fd:.4f}"),
    ]
    for label, ok, detail in results:
        record("1", label, ok, detail)
    assert all(ok for _, ok, _ in results), results


@pytest.mark.acceptance
@pytest.mark.filterwarnings("ignore:rank-deficient")
def test_c2_heston_put():
    agg = experiment("heston-put")["aggregate"]
    check("2", "mean of 10 runs within 0.04 of 5.033", abs(agg["mean_price"] - 5.033) <= 0.04,
          f"mean {agg['mean_price']:.4f} (std {agg['std_price']:.4f}), highest {agg['highest_price']:.4f}")


@pytest.mark.acceptance
@pytest.mark.filterwarnings("ignore:rank-deficient")
def test_c3_straddle():
    agg = experiment("straddle")["aggregate"]
    lsmc = cached_lsmc("straddle")
    results = [
        ("mean >= own LSMC - 0.05", agg["mean_price"] >= lsmc["price"] - 0.05,
         f"mean {agg['mean_price']:.4f}, LSMC {lsmc['price']:.4f} ({lsmc['stderr']:.4f})"),
        ("mean within 0.06 of 12.080", abs(agg["mean_price"] - 12.080) <= 0.06,
         f"mean {agg['mean_price']:.4f} (std {agg['std_price']:.4f})"),
        ("LSMC within 0.04 of 12.018", abs(lsmc["price"] - 12.018) <= 0.04,
         f"LSMC {lsmc['price']:.4f} ({lsmc['stderr']:.4f})"),
    ]
    for label, ok, detail in results:
        record("3", label, ok, detail)
    assert all(ok for _, ok, _ in results), results


@pytest.mark.acceptance
@pytest.mark.filterwarnings("ignore:rank-deficient")
def test_c4_symmetric_max_call():
    d2 = experiment("maxcall-d2")["aggregate"]
    d5 = experiment("maxcall-d5")["aggregate"]
    results = [
        ("d=2 best run in [13.86, 13.96]", 13.86 <= d2["highest_price"] <= 13.96,
         f"highest {d2['highest_price']:.4f}, mean {d2['mean_price']:.4f}"),
        ("d=5 best run in [26.05, 26.20]", 26.05 <= d5["highest_price"] <= 26.20,
         f"highest {d5['highest_price']:.4f}, mean {d5['mean_price']:.4f}"),
    ]
    for label, ok, detail in results:
        record("4", label, ok, detail)
    assert all(ok for _, ok, _ in results), results


@pytest.mark.acceptance
@pytest.mark.filterwarnings("ignore:rank-deficient")
def test_c5_asymmetric_max_call():
    agg = experiment("maxcall-asym")["aggregate"]
    lsmc = cached_lsmc("maxcall-asym")
    results = [
        ("mean within 0.06 of 15.551", abs(agg["mean_price"] - 15.551) <= 0.06,
         f"mean {agg['mean_price']:.4f} (std {agg['std_price']:.4f}), highest {agg['highest_price']:.4f}"),
        ("LSMC within 0.05 of 15.558", abs(lsmc["price"] - 15.558) <= 0.05,
         f"LSMC {lsmc['price']:.4f} ({lsmc['stderr']:.4f})"),
    ]
    for label, ok, detail in results:
        record("5", label, ok, detail)
    assert all(ok for _, ok, _ in results), results


@pytest.mark.acceptance
@pytest.mark.filterwarnings("ignore:rank-deficient")
def test_c6_up_and_out_max_call():
    agg = experiment("uo-maxcall-d4")["aggregate"]
    check("6", "d=4 best run inside [41.541, 43.853]", 41.541 <= agg["highest_price"] <= 43.853,
          f"highest {agg['highest_price']:.4f}, mean {agg['mean_price']:.4f}")


@pytest.mark.acceptance
@pytest.mark.filterwarnings("ignore:rank-deficient")
def test_c7_lookback_call():
    runs = experiment("lookback-fixed-call", LOOKBACK_SEEDS)["runs"]
    ok_all = True
    details = []
    for r in runs:
        p = r["price"]
        lo = p["european"] - 3 * p["stderr"]
        hi = p["upper_bound"] + 3 * p["stderr"]
        ok_all &= lo <= p["price"] <= hi
        details.append(f"seed {r['seed']}: {p['price']:.4f} in [{lo:.4f}, {hi:.4f}]")
    v_e = np.mean([r["price"]["european"] for r in runs])
    se_e = max(r["price"]["european_stderr"] for r in runs)
    record("7", "every price inside [v_e - 3se, e^{rT} v_e + 3se]", ok_all, "; ".join(details))
    # the European value from the same paths against the reference column
    ok_e = abs(v_e - 16.808) <= 3 * se_e
    record("7", "MC European value matches 16.808 within 3 se", ok_e,
           f"v_e {v_e:.4f} (se {se_e:.4f})")
    assert ok_all and ok_e, details


# ---------------------------------------------------------------------------
# 8: property suite

@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, st.integers(1, 80), elements=st.floats(0.0, 1.0)))
def _telescoping(p):
    b = relax.budgets(p[None])[0]
    assert abs((np.append(p, 1.0) * b).sum() - 1.0) <= 1e-12


def test_c8a_budget_telescoping():
    try:
        _telescoping()
        ok, detail = True, "300 random sequences"
    except AssertionError as exc:
        ok, detail = False, str(exc)
    check("8a", "sum p_t b_t = 1 to 1e-12", ok, detail)


def test_c8b_reward_gradient_vs_finite_differences():
    worst = 0.0
    for name in ("bs-put-n50", "straddle", "maxcall-d5", "heston-put", "lookback-fixed-call"):
        problem = get_preset(name)
        grid = TimeGrid.uniform(problem.grid.maturity, 8, substeps=problem.grid.substeps)
        problem = problem.with_overrides(grid=grid)
        cfg = net_config_for(problem)
        rng = np.random.default_rng(17)
        theta = netcore.init_params(cfg, rng) + 0.1 * rng.standard_normal(cfg.n_params)
        W, _ = netcore.unpack(cfg, theta)[-1]
        W[:] = rng.standard_normal(W.shape) * 3.0
        batch = simulate_batch(problem.model, grid, problem.lam_array, 8, seed=2)
        eps = 0.3 * problem.instrument.strike
        _, grad, _ = empirical_reward(problem, cfg, theta, batch, eps)
        fd = np.empty(cfg.n_params)
        h = 1e-5
        for i in range(cfg.n_params):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd[i] = (empirical_reward(problem, cfg, tp, batch, eps, with_grad=False)[0]
                     - empirical_reward(problem, cfg, tm, batch, eps, with_grad=False)[0]) / (2 * h)
        rel = np.linalg.norm(fd - grad) / np.linalg.norm(fd)
        worst = max(worst, rel)
    check("8b", "gradient rel. err <= 1e-4 on 8-path batches", worst <= 1e-4,
          f"worst relative error {worst:.2e} over 5 presets")


def test_c8c_likelihood_ratio_mean_one():
    problem = get_preset("bs-put-n50")
    n = 10 ** 6
    total = total_sq = 0.0
    for first in range(0, n, 2 ** 17):
        m = min(2 ** 17, n - first)
        b = simulate_batch(problem.model, problem.grid, [0.275], m, seed=31, first_path=first)
        w = b.weights[:, -1]
        total += w.sum()
        total_sq += (w * w).sum()
    mean = total / n
    se = np.sqrt((total_sq / n - mean ** 2) / n)
    check("8c", "E[Z_T] = 1 within 3 se at 1e6 paths", abs(mean - 1.0) <= 3 * se,
          f"mean {mean:.5f}, se {se:.5f}")


def test_c8d_importance_sampling_price_invariance():
    problem = get_preset("bs-put-n50")
    fd = fd_american_put(0.06, 0.0, 0.4, 40.0, 1.0, problem.grid.dates)
    b = CurveBoundary(problem.grid.dates[:-1], fd.boundary)
    n = 2 ** 19
    plain = price_mc(problem, b, n, seed=41)
    shifted = price_mc(problem, b, n, seed=42, lam=[0.275])
    tol = 3 * np.hypot(plain.stderr, shifted.stderr)
    check("8d", "price under Q and Q_lambda agree within 3 combined se",
          abs(plain.price - shifted.price) <= tol,
          f"{plain.price:.4f} vs {shifted.price:.4f}, tol {tol:.4f}")


def test_c8e_epsilon_sweep_converges_to_sharp_value():
    problem = get_preset("bs-put-n50")
    rep = train(problem, config=TrainConfig(iterations=1500, seed=0))
    cfg, theta = rep.net_config, rep.theta
    n = 2 ** 18
    batch = simulate_batch(problem.model, problem.grid, [0.0], n, seed=51, purpose=PRICE)
    # sharp value on the same paths
    tau = stop_indices(problem.instrument, NetBoundary(cfg, theta), batch)
    rows = np.arange(n)
    phi = ins.payoff(problem.instrument, batch.times, batch.s)
    sharp = phi[rows, tau] * batch.weights[rows, tau]
    sharp_mean, sharp_se = sharp.mean(), sharp.std(ddof=1) / np.sqrt(n)
    lines = []
    for eps in (2.26, 1.13, 0.57, 0.28, 0.14):
        _, _, res = empirical_reward(problem, cfg, theta, batch, eps, with_grad=False)
        lines.append(f"eps {eps}: {res.mean:.4f}")
    tol = 3 * np.hypot(res.std / np.sqrt(n), sharp_se)
    gap = abs(res.mean - sharp_mean)
    check("8e", "relaxed reward at smallest eps within 3 combined se of sharp value", gap <= tol,
          f"{'; '.join(lines)}; sharp {sharp_mean:.4f}; gap {gap:.4f} <= {tol:.4f}")


def test_c8f_homogeneity_and_scale_invariance():
    rng = np.random.default_rng(61)
    worst = 0.0
    for name in ("bs-put-n50", "maxcall-d5", "maxcall-asym", "uo-maxcall-d4", "lookback-fixed-call"):
        instr = get_preset(name).instrument
        s = rng.uniform(10, 200, (1000, instr.n_assets))
        z = s.max(axis=1) * rng.uniform(1.0, 1.5, 1000)
        c = rng.uniform(0.1, 10, 1000)
        a1, xi1 = ins.coords(instr, s, z=z)
        a2, xi2 = ins.coords(instr, c[:, None] * s, z=c * z)
        if instr.latent == "sorted_ratios_z":
            # the raw running maximum is not a ratio; compare the scale-free part
            xi1, xi2 = xi1[:, :-1], xi2[:, :-1]
        worst = max(worst, np.max(np.abs(a2 / (c * a1) - 1)))
        if xi1.size:
            worst = max(worst, np.max(np.abs(xi2 - xi1)))
    check("8f", "alpha homogeneous and Xi scale-invariant on 1000 states", worst <= 1e-14,
          f"worst deviation {worst:.1e}")


def test_c8g_fd_obstacle():
    fd = fd_american_put(0.06, 0.0, 0.4, 40.0, 1.0, np.linspace(0, 1, 51))
    gap = float((fd.values - np.maximum(40 - fd.s, 0)[None]).min())
    check("8g", "FD value >= payoff grid-wide", gap >= -1e-12, f"min(value - payoff) {gap:.2e}")


def test_c8h_adam_single_step():
    new, _ = adam_step(np.zeros(1), np.ones(1), AdamState.zeros(1, lr=0.001))
    err = abs(new[0] - 0.001 / (1 + 1e-8))
    check("8h", "Adam single step to 1e-12", err <= 1e-12, f"step {float(new[0])!r}, error {err:.1e}")
