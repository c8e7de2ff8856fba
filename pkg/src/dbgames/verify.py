"""Bundled verification suites behind `dbgames verify` and `dbgames game check`.

fast: exact-identity checks on built-in small structures (machine precision,
under a minute).  full: adds the tail-constant plateaus on a random regular
graph with a thousand vertices and the donation-game replicator experiment.
"""
from __future__ import annotations

import numpy as np

from . import coalescent as co
from . import dynamics, game, graphs, oracle


def _random_configuration(n: int, s: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, s, size=n).astype(np.int8)


def _check(results: dict, name: str, value: float, tol: float) -> None:
    results[name] = {"value": float(value), "tolerance": tol, "passed": bool(value <= tol)}


def _check_bool(results: dict, name: str, ok: bool, detail: float) -> None:
    results[name] = {"value": float(detail), "tolerance": None, "passed": bool(ok)}


def drift_identity_suite(kernel, spec: game.GameSpec, trials: int, seed: int,
                         declared_prisoner: tuple[float, float] | None = None) -> dict:
    """Cross-check the drift functional along its independent routes.

    Route (i) vs (ii) holds for any payoff; when a donation structure is
    declared, route (iii) with the declared (b, c) must agree as well, which
    is what catches a corrupted payoff file.
    """
    rng = np.random.default_rng(seed)
    worst_12 = 0.0
    worst_23 = 0.0
    for _ in range(trials):
        xi = _random_configuration(kernel.n, spec.s, rng)
        sigma = int(rng.integers(spec.s))
        forms = game.dbar(kernel, spec, xi, sigma)
        worst_12 = max(worst_12, abs(forms.double_sum - forms.chain_moment))
        if declared_prisoner is not None:
            b, c = declared_prisoner
            obs = game.observables(kernel, xi, spec.s)
            d1 = (b * obs.bar_freq_bullet[1, 0] - b * obs.bar_pair[1, 0]
                  - c * obs.bar_freq2[1, 0])
            d = d1 if sigma == 1 else -d1
            worst_23 = max(worst_23, abs(forms.chain_moment - d))
    out = {"route_i_vs_ii": worst_12}
    if declared_prisoner is not None:
        out["route_ii_vs_iii"] = worst_23
    return out


def fast_suite(seed: int = 0) -> dict:
    results: dict = {}
    rng = np.random.default_rng(seed)

    k4 = graphs.generate("complete", n=4)
    c6 = graphs.generate("cycle", n=6)
    path3 = graphs.build_kernel(np.array([[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]]))
    rr50 = graphs.generate("random_regular", n=50, k=3, seed=seed + 1)
    rr100 = graphs.generate("random_regular", n=100, k=3, seed=seed + 2)

    # drift-functional identities over random graphs, configurations, types
    prisoner = game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0),
                             mutation=np.zeros(2), w=0.1)
    worst = 0.0
    worst3 = 0.0
    for kernel in (k4, c6, path3, rr50):
        res = drift_identity_suite(kernel, prisoner, trials=25, seed=seed + 3,
                                   declared_prisoner=(3.0, 1.0))
        worst = max(worst, res["route_i_vs_ii"])
        worst3 = max(worst3, res["route_ii_vs_iii"])
    _check(results, "drift_identity_routes_i_ii", worst, 1e-12)
    _check(results, "drift_identity_routes_ii_iii", worst3, 1e-12)

    # multi-type drift identity
    rng3 = np.random.default_rng(seed + 4)
    pay3 = rng3.normal(size=(3, 3))
    spec3 = game.GameSpec(payoff=pay3, mutation=np.zeros(3), w=0.0)
    res3 = drift_identity_suite(rr50, spec3, trials=25, seed=seed + 5)
    _check(results, "drift_identity_three_types", res3["route_i_vs_ii"], 1e-12)

    # second-order expansion reassembles the replacement law exactly
    worst = 0.0
    for _ in range(100):
        xi = _random_configuration(rr50.n, 2, rng)
        x = int(rng.integers(rr50.n))
        nbrs = rr50.neighbors(x)
        y = int(nbrs[rng.integers(len(nbrs))])
        a, b, r = game.expansion_terms(rr50, prisoner, xi, x, y)
        qxy = rr50.weights[x, y]
        w = prisoner.w
        rebuilt = qxy * (1.0 + w * (a - b) + w * w * r)
        row = game.perturbed_row(rr50, prisoner, xi, x)
        worst = max(worst, abs(rebuilt - row[y]))
    _check(results, "expansion_reassembly", worst, 1e-12)

    # stationarity identity between the two canonical pair laws
    tg = np.linspace(0.05, 3.0, 8)
    worst = max(co.ergodic_identity_residual(k, tg)
                for k in (k4, c6, path3, rr100))
    _check(results, "meeting_time_stationarity_identity", worst, 1e-8)

    # shift recursion between lag laws
    worst = 0.0
    for kernel in (k4, rr50):
        chain = co.PairChain(kernel)
        for ell in (1, 2, 3):
            worst = max(worst, co.shift_recursion_residual(kernel, ell, tg, chain))
    worst = max(worst, co.shift_recursion_residual(c6, 1, tg))
    _check(results, "lag_shift_recursion", worst, 1e-7)

    # integrated-tail comparison inequality
    ok_all = True
    margin = np.inf
    for kernel in (k4, rr50):
        chain = co.PairChain(kernel)
        for ell in (1, 2, 3):
            for s0 in (2.5, 3.0):
                ok, m = co.comparison_inequality_check(kernel, ell, s0, [0.5, 1.0, 2.0], chain)
                ok_all = ok_all and ok
                margin = min(margin, m)
    _check_bool(results, "integrated_tail_comparison", ok_all, margin)

    # ancestral duality, exact for one and two sites
    k3 = graphs.generate("complete", n=3)
    worst = 0.0
    for _ in range(20):
        xi0 = _random_configuration(path3.n, 2, rng)
        x, y = rng.choice(path3.n, size=2, replace=False)
        a, bb = int(rng.integers(2)), int(rng.integers(2))
        t = float(rng.uniform(0.2, 2.0))
        r1 = oracle.duality_check(path3, np.zeros(2), xi0, (int(x),), (a,), t)
        r2 = oracle.duality_check(path3, np.zeros(2), xi0, (int(x), int(y)), (a, bb), t)
        worst = max(worst, r1["diff"], r2["diff"])
    _check(results, "coalescing_duality_exact", worst, 1e-8)

    # duality with mutation via the ancestral mark representation (MC)
    xi0 = np.array([0, 1, 1], dtype=np.int8)
    r = oracle.duality_check(k3, np.array([0.3, 0.2]), xi0, (0, 1), (1, 1), 1.0,
                             mc_runs=40_000, seed=seed + 6)
    z = r["diff"] / r["stderr"] if r["stderr"] else 0.0
    _check(results, "coalescing_duality_mutation_mc", z, 3.0)

    # neutral density martingale: constant expectation and centered ensembles
    g0 = game.GameSpec(payoff=np.zeros((2, 2)), mutation=np.zeros(2), w=0.0)
    gen = oracle.build_generator(k4, g0)
    xi0 = np.array([0, 1, 0, 1], dtype=np.int8)
    e0 = oracle.expectation(gen, k4, g0, xi0, 0.0, lambda xi: float((xi == 1) @ k4.pi))
    e1 = oracle.expectation(gen, k4, g0, xi0, 1.5, lambda xi: float((xi == 1) @ k4.pi))
    _check(results, "voter_density_martingale_exact", abs(e0 - e1), 1e-9)
    trajs = dynamics.ensemble(k4, g0, ("fixed", xi0), 1.0, 4000, seed + 7)
    vals = np.array([tr.densities[-1, 1] for tr in trajs])
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    _check(results, "voter_density_martingale_mc", abs(vals.mean() - 0.5) / se, 3.0)

    results["passed"] = all(v["passed"] for v in results.values() if isinstance(v, dict))
    return results


def full_suite(seed: int = 0, outdir=None, replicas: int = 200) -> dict:
    from pathlib import Path

    from . import io as dbio
    from .replicator import integrate_two_type

    results = fast_suite(seed)

    rr = graphs.generate("random_regular", n=1000, k=3, seed=seed + 10)
    chain = co.PairChain(rr)
    est = co.estimate_kappas(rr, mode="auto", samples=20_000, seed=seed + 11, chain=chain)
    k0 = est.value("k0")
    _check(results, "rrg_tail_constant_k0_low", 0.9 - k0, 0.0)
    _check(results, "rrg_tail_constant_k0_high", k0 - 1.1, 0.0)
    _check(results, "rrg_tail_constant_k0_plateau", est.plateau_spread("k0"), 0.05)
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "kappa.json").write_text(dbio.kappa_to_json(est))

    # donation-game replicator experiment: logistic limit at unit coefficient
    theta = 100.0
    gamma = est.gamma
    w = 2.0 * gamma * rr.nu1 / theta
    spec = game.GameSpec(payoff=game.prisoner_payoff(6.0, 1.0),
                         mutation=np.zeros(2), w=w)
    horizon = 3.0 * theta
    trajs = dynamics.ensemble(rr, spec, ("bernoulli", 0.5), horizon, replicas,
                              seed + 12, record_dt=horizon / 256)
    grid, upath = integrate_two_type(6.0, 1.0, 0.5, 3.0, 1e-3, w_inf=1.0,
                                     q2_inf=1.0 / 3.0)
    from .analysis import replicator_deviation

    dev = replicator_deviation(trajs, theta, grid, np.stack([1 - upath, upath], axis=1))
    _check(results, "rrg_replicator_deviation", dev["pooled"], 0.05)

    results["passed"] = all(v["passed"] for v in results.values() if isinstance(v, dict))
    return results
